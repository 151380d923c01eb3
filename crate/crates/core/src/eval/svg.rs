// SPDX-License-Identifier: Apache-2.0

//! Minimal SVG plots: detection-statistic traces and ROC overlays.

use std::fmt::Write;

use super::roc::RocCurve;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const PANEL_W: f64 = 560.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        (0.0, 1.0)
    } else if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

/// One panel per series: statistic against image index, with a dashed
/// separator after the first `members` images.
pub fn trace_svg(series: &[(String, Vec<f64>)], members: usize) -> String {
    let height = MARGIN + series.len() as f64 * (PANEL_H + MARGIN);
    let width = PANEL_W + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (p, (label, values)) in series.iter().enumerate() {
        let top = MARGIN + p as f64 * (PANEL_H + MARGIN);
        let n = values.len().max(2);
        let (lo, hi) = range(values);
        let x = |i: f64| MARGIN + PANEL_W * i / (n - 1) as f64;
        let y = |v: f64| top + PANEL_H * (1.0 - (v - lo) / (hi - lo));
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN}" y="{top}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black"/>"#
        );
        let _ = writeln!(s, r#"<text x="{MARGIN}" y="{:.1}">{}</text>"#, top - 6.0, escape(label));
        let _ = writeln!(s, r#"<text x="4" y="{:.1}">{hi:.3e}</text>"#, top + 12.0);
        let _ = writeln!(s, r#"<text x="4" y="{:.1}">{lo:.3e}</text>"#, top + PANEL_H);
        if members > 0 && members < values.len() {
            let sx = x(members as f64 - 0.5);
            let _ = writeln!(
                s,
                r##"<line x1="{sx:.2}" y1="{top}" x2="{sx:.2}" y2="{:.1}" stroke="#888" stroke-dasharray="4 3"/>"##,
                top + PANEL_H
            );
        }
        let color = PALETTE[p % PALETTE.len()];
        let _ = write!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1" points=""#);
        for (i, &v) in values.iter().enumerate() {
            let _ = write!(s, "{:.2},{:.2} ", x(i as f64), y(v));
        }
        let _ = writeln!(s, r#""/>"#);
    }
    s.push_str("</svg>\n");
    s
}

/// ROC curves on a shared unit square with the chance diagonal.
pub fn roc_svg(curves: &[(String, &RocCurve)]) -> String {
    let side = 360.0;
    let width = side + 2.0 * MARGIN + 180.0;
    let height = side + 2.0 * MARGIN;
    let x = |f: f64| MARGIN + side * f;
    let y = |t: f64| MARGIN + side * (1.0 - t);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<rect x="{MARGIN}" y="{MARGIN}" width="{side}" height="{side}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#aaa" stroke-dasharray="4 3"/>"##,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">false positive rate</text>"#, x(0.5), height - 12.0);
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">true positive rate</text>"#,
        y(0.5),
        y(0.5)
    );
    for (i, (label, curve)) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let _ = write!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points=""#);
        for p in &curve.points {
            let _ = write!(s, "{:.2},{:.2} ", x(p.fpr), y(p.tpr));
        }
        let _ = writeln!(s, r#""/>"#);
        let ly = MARGIN + 16.0 * (i as f64 + 1.0);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{color}">{} (AUC {:.3})</text>"#,
            x(1.0) + 12.0,
            escape(label),
            curve.auc
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::roc::RocPoint;

    #[test]
    fn trace_contains_one_polyline_per_series() {
        let svg = trace_svg(&[("NP".into(), vec![1.0, 2.0, 0.5]), ("NCC <x>".into(), vec![0.0; 3])], 2);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("NCC &lt;x&gt;"));
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn roc_plot_lists_auc() {
        let c = RocCurve {
            points: vec![
                RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 },
                RocPoint { threshold: f64::NEG_INFINITY, fpr: 1.0, tpr: 1.0 },
            ],
            auc: 0.5,
            detector: None,
            l: Some(50),
        };
        let svg = roc_svg(&[("L=50".into(), &c)]);
        assert!(svg.contains("AUC 0.500"));
    }
}
