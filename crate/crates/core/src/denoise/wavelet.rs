// SPDX-License-Identifier: Apache-2.0

//! Orthonormal 2-D Daubechies-8 transform with periodized filtering.
//!
//! A level whose input length is odd is first extended by repeating the last
//! sample; the original length is remembered and restored on inversion.
//! With even lengths at every level the transform is exactly orthonormal.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::ImageMatrix;

/// Daubechies-8 (16-tap) minimum-phase scaling filter.
#[allow(clippy::excessive_precision)]
pub const DB8_LOWPASS: [f64; 16] = [
    0.054415842243104009955,
    0.31287159091429997066,
    0.67563073629728980681,
    0.58535468365420671277,
    -0.015829105256349305667,
    -0.28401554296154692652,
    0.00047248457391328277036,
    0.12874742662047845886,
    -0.01736930100180754617,
    -0.044088253930794751507,
    0.013981027917398281649,
    0.0087460940474057767164,
    -0.0048703529934515743104,
    -0.0003917403733769470463,
    0.00067544940645056936637,
    -0.00011747678412476953373,
];

fn highpass() -> [f64; 16] {
    let mut g = [0.0; 16];
    for (k, gk) in g.iter_mut().enumerate() {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        *gk = sign * DB8_LOWPASS[15 - k];
    }
    g
}

/// Detail subbands of one decomposition level.
#[derive(Clone, Debug, PartialEq)]
pub struct DetailBands {
    /// Low-pass across rows, high-pass down columns.
    pub horizontal: ImageMatrix,
    /// High-pass across rows, low-pass down columns.
    pub vertical: ImageMatrix,
    pub diagonal: ImageMatrix,
}

impl DetailBands {
    pub fn iter(&self) -> impl Iterator<Item = &ImageMatrix> {
        [&self.horizontal, &self.vertical, &self.diagonal].into_iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ImageMatrix> {
        [&mut self.horizontal, &mut self.vertical, &mut self.diagonal].into_iter()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPyramid {
    pub approximation: ImageMatrix,
    /// Finest level first.
    pub details: Vec<DetailBands>,
    /// Input shape of each level, finest first.
    shapes: Vec<(usize, usize)>,
}

impl WaveletPyramid {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn coefficients(&self) -> impl Iterator<Item = f64> + '_ {
        self.approximation
            .data()
            .iter()
            .copied()
            .chain(self.details.iter().flat_map(|d| d.iter().flat_map(|b| b.data().iter().copied())))
    }
}

pub fn max_levels(rows: usize, cols: usize) -> usize {
    rows.min(cols).max(1).ilog2() as usize
}

fn analyze_1d(x: &[f64], lo: &mut [f64], hi: &mut [f64], g: &[f64; 16]) {
    let n = x.len();
    for i in 0..lo.len() {
        let (mut a, mut d) = (0.0, 0.0);
        for k in 0..16 {
            let v = x[(2 * i + k) % n];
            a += DB8_LOWPASS[k] * v;
            d += g[k] * v;
        }
        lo[i] = a;
        hi[i] = d;
    }
}

fn synthesize_1d(lo: &[f64], hi: &[f64], out: &mut [f64], g: &[f64; 16]) {
    let n = out.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    for i in 0..lo.len() {
        for k in 0..16 {
            out[(2 * i + k) % n] += DB8_LOWPASS[k] * lo[i] + g[k] * hi[i];
        }
    }
}

/// Pads `len` to even by repeating the last sample.
#[inline]
fn even(len: usize) -> usize {
    len + len % 2
}

/// One 2-D analysis step; returns (LL, bands).
fn analyze_level(x: &ImageMatrix, g: &[f64; 16]) -> (ImageMatrix, DetailBands) {
    let (rows, cols) = x.shape();
    let (pr, pc) = (even(rows), even(cols));
    let (hr, hc) = (pr / 2, pc / 2);

    // rows: low half into [0, hc), high half into [hc, pc)
    let mut row_pass = vec![0.0; rows * pc];
    row_pass
        .par_chunks_mut(pc)
        .zip(x.data().par_chunks(cols))
        .for_each(|(dst, src)| {
            let mut buf = src.to_vec();
            if cols % 2 == 1 {
                buf.push(src[cols - 1]);
            }
            let (lo, hi) = dst.split_at_mut(hc);
            analyze_1d(&buf, lo, hi, g);
        });

    // columns
    let mut col_out = vec![0.0; pr * pc];
    let columns: Vec<(Vec<f64>, Vec<f64>)> = (0..pc)
        .into_par_iter()
        .map(|c| {
            let mut col: Vec<f64> = (0..rows).map(|r| row_pass[r * pc + c]).collect();
            if rows % 2 == 1 {
                col.push(col[rows - 1]);
            }
            let mut lo = vec![0.0; hr];
            let mut hi = vec![0.0; hr];
            analyze_1d(&col, &mut lo, &mut hi, g);
            (lo, hi)
        })
        .collect();
    for (c, (lo, hi)) in columns.into_iter().enumerate() {
        for r in 0..hr {
            col_out[r * pc + c] = lo[r];
            col_out[(hr + r) * pc + c] = hi[r];
        }
    }

    let quad = |r0: usize, c0: usize| {
        ImageMatrix::from_fn(hr, hc, |r, c| col_out[(r0 + r) * pc + c0 + c])
    };
    (
        quad(0, 0),
        DetailBands {
            horizontal: quad(hr, 0),
            vertical: quad(0, hc),
            diagonal: quad(hr, hc),
        },
    )
}

fn synthesize_level(ll: &ImageMatrix, bands: &DetailBands, shape: (usize, usize), g: &[f64; 16]) -> ImageMatrix {
    let (rows, cols) = shape;
    let (pr, pc) = (even(rows), even(cols));
    let (hr, hc) = (pr / 2, pc / 2);

    // undo the column pass into a rows x pc buffer (cropping the padded row)
    let columns: Vec<Vec<f64>> = (0..pc)
        .into_par_iter()
        .map(|c| {
            let (lo, hi): (Vec<f64>, Vec<f64>) = if c < hc {
                (
                    (0..hr).map(|r| ll[(r, c)]).collect(),
                    (0..hr).map(|r| bands.horizontal[(r, c)]).collect(),
                )
            } else {
                (
                    (0..hr).map(|r| bands.vertical[(r, c - hc)]).collect(),
                    (0..hr).map(|r| bands.diagonal[(r, c - hc)]).collect(),
                )
            };
            let mut out = vec![0.0; pr];
            synthesize_1d(&lo, &hi, &mut out, g);
            out
        })
        .collect();

    let mut data = vec![0.0; rows * cols];
    data.par_chunks_mut(cols).enumerate().for_each(|(r, dst)| {
        let lo: Vec<f64> = (0..hc).map(|c| columns[c][r]).collect();
        let hi: Vec<f64> = (hc..pc).map(|c| columns[c][r]).collect();
        let mut out = vec![0.0; pc];
        synthesize_1d(&lo, &hi, &mut out, g);
        dst.copy_from_slice(&out[..cols]);
    });
    ImageMatrix::from_vec_unchecked(rows, cols, data)
}

/// Forward transform with `levels` decomposition levels.
pub fn dwt2(x: &ImageMatrix, levels: usize) -> Result<WaveletPyramid> {
    if levels == 0 {
        return Err(Error::invalid("wavelet levels must be >= 1"));
    }
    let need = 1usize.checked_shl(levels as u32).unwrap_or(usize::MAX);
    if x.rows() < need || x.cols() < need {
        return Err(Error::invalid(format!(
            "{}x{} image too small for {levels} wavelet levels (needs {need} per side)",
            x.rows(),
            x.cols()
        )));
    }
    let g = highpass();
    let mut current = x.clone();
    let mut details = Vec::with_capacity(levels);
    let mut shapes = Vec::with_capacity(levels);
    for _ in 0..levels {
        shapes.push(current.shape());
        let (ll, bands) = analyze_level(&current, &g);
        details.push(bands);
        current = ll;
    }
    Ok(WaveletPyramid {
        approximation: current,
        details,
        shapes,
    })
}

pub fn idwt2(pyramid: &WaveletPyramid) -> ImageMatrix {
    let g = highpass();
    let mut current = pyramid.approximation.clone();
    for (bands, &shape) in pyramid.details.iter().zip(&pyramid.shapes).rev() {
        current = synthesize_level(&current, bands, shape, &g);
    }
    current
}
