// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::membership::{Detector, MembershipScore};
use crate::rng::{stream_rng, Stream};

pub const DEFAULT_BOOTSTRAP: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Scores strictly above this are called members.
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub detector: Option<Detector>,
    pub l: Option<usize>,
}

/// `(statistic, is_member)` pairs of the labeled scores.
fn labeled(scores: &[MembershipScore]) -> Vec<(f64, bool)> {
    scores
        .iter()
        .filter_map(|s| s.is_member_truth.map(|m| (s.statistic, m)))
        .collect()
}

/// Threshold sweep over `+∞`, every distinct statistic (descending) and `-∞`.
/// Thresholds that do not move the operating point are dropped.
pub fn roc_from_pairs(pairs: &[(f64, bool)]) -> Result<(Vec<RocPoint>, f64)> {
    let positives = pairs.iter().filter(|p| p.1).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::invalid("ROC needs both member and non-member scores"));
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        // At threshold sorted[i].0 only strictly larger scores are positive,
        // i.e. the counts accumulated so far.
        let threshold = sorted[i].0;
        push_point(&mut points, threshold, fp, tp, negatives, positives);
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
    }
    push_point(&mut points, f64::NEG_INFINITY, fp, tp, negatives, positives);
    let auc = trapezoid(&points);
    Ok((points, auc))
}

fn push_point(points: &mut Vec<RocPoint>, threshold: f64, fp: usize, tp: usize, neg: usize, pos: usize) {
    let fpr = fp as f64 / neg as f64;
    let tpr = tp as f64 / pos as f64;
    let last = points.last().expect("starts with the +inf point");
    if last.fpr != fpr || last.tpr != tpr {
        points.push(RocPoint { threshold, fpr, tpr });
    }
}

pub fn trapezoid(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * 0.5 * (w[0].tpr + w[1].tpr))
        .sum()
}

/// ROC of the labeled scores; unlabeled ones are ignored.
pub fn roc_points(scores: &[MembershipScore]) -> Result<RocCurve> {
    let (points, auc) = roc_from_pairs(&labeled(scores))?;
    let mut detectors = scores.iter().map(|s| s.detector);
    let first = detectors.next();
    let detector = if detectors.all(|d| Some(d) == first) { first } else { None };
    Ok(RocCurve {
        points,
        auc,
        detector,
        l: None,
    })
}

pub fn auc(scores: &[MembershipScore]) -> Result<f64> {
    Ok(roc_from_pairs(&labeled(scores))?.1)
}

/// Bootstrap standard error of the AUC. Whole trials are resampled when the
/// scores carry at least two distinct trial ids, individual scores otherwise.
/// Resamples missing one of the classes are skipped.
pub fn bootstrap_auc_se(scores: &[MembershipScore], resamples: usize, seed: u64) -> Result<f64> {
    let mut groups: BTreeMap<Option<usize>, Vec<(f64, bool)>> = BTreeMap::new();
    for s in scores {
        if let Some(m) = s.is_member_truth {
            groups.entry(s.trial).or_default().push((s.statistic, m));
        }
    }
    let groups: Vec<Vec<(f64, bool)>> = if groups.len() >= 2 && !groups.contains_key(&None) {
        groups.into_values().collect()
    } else {
        groups.into_values().flatten().map(|p| vec![p]).collect()
    };
    if groups.is_empty() {
        return Err(Error::invalid("no labeled scores"));
    }
    let mut rng = stream_rng(seed, Stream::Bootstrap);
    let mut aucs = Vec::with_capacity(resamples);
    let mut sample = Vec::new();
    for _ in 0..resamples {
        sample.clear();
        for _ in 0..groups.len() {
            sample.extend_from_slice(&groups[rng.random_range(0..groups.len())]);
        }
        if let Ok((_, a)) = roc_from_pairs(&sample) {
            aucs.push(a);
        }
    }
    if aucs.len() < 2 {
        return Err(Error::Numerical("too few usable bootstrap resamples".into()));
    }
    let n = aucs.len() as f64;
    let mean = aucs.iter().sum::<f64>() / n;
    Ok((aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

/// Bootstrap standard error of `AUC(a) - AUC(b)` for two detectors scored
/// on the same trials. Trials are resampled jointly so the pairing is kept.
pub fn bootstrap_auc_diff_se(a: &[MembershipScore], b: &[MembershipScore], resamples: usize, seed: u64) -> Result<f64> {
    let group = |scores: &[MembershipScore]| -> Result<BTreeMap<usize, Vec<(f64, bool)>>> {
        let mut g: BTreeMap<usize, Vec<(f64, bool)>> = BTreeMap::new();
        for s in scores {
            let t = s.trial.ok_or_else(|| Error::invalid("paired bootstrap needs trial ids"))?;
            if let Some(m) = s.is_member_truth {
                g.entry(t).or_default().push((s.statistic, m));
            }
        }
        Ok(g)
    };
    let (ga, gb) = (group(a)?, group(b)?);
    let trials: Vec<usize> = ga.keys().copied().filter(|t| gb.contains_key(t)).collect();
    if trials.len() < 2 || trials.len() != ga.len() || trials.len() != gb.len() {
        return Err(Error::invalid("paired bootstrap needs the same set of at least 2 trials"));
    }
    let mut rng = stream_rng(seed, Stream::Bootstrap);
    let mut diffs = Vec::with_capacity(resamples);
    let (mut sa, mut sb) = (Vec::new(), Vec::new());
    for _ in 0..resamples {
        sa.clear();
        sb.clear();
        for _ in 0..trials.len() {
            let t = trials[rng.random_range(0..trials.len())];
            sa.extend_from_slice(&ga[&t]);
            sb.extend_from_slice(&gb[&t]);
        }
        if let (Ok((_, x)), Ok((_, y))) = (roc_from_pairs(&sa), roc_from_pairs(&sb)) {
            diffs.push(x - y);
        }
    }
    if diffs.len() < 2 {
        return Err(Error::Numerical("too few usable bootstrap resamples".into()));
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().sum::<f64>() / n;
    Ok((diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

pub fn write_roc_csv(out: &mut impl Write, curve: &RocCurve) -> std::io::Result<()> {
    writeln!(out, "threshold,fpr,tpr")?;
    for p in &curve.points {
        writeln!(out, "{:e},{},{}", p.threshold, p.fpr, p.tpr)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn score(statistic: f64, member: bool) -> MembershipScore {
        MembershipScore {
            statistic,
            detector: Detector::Ncc,
            image_id: String::new(),
            is_member_truth: Some(member),
            trial: None,
        }
    }

    #[test]
    fn two_point_case() {
        let c = roc_points(&[score(1.0, true), score(0.0, false)]).unwrap();
        let pts: Vec<(f64, f64)> = c.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        assert_eq!(pts, vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(c.auc, 1.0);
        assert_eq!(c.detector, Some(Detector::Ncc));
    }

    #[test]
    fn perfect_and_inverted() {
        let good: Vec<_> = (0..10).map(|i| score(10.0 + i as f64, true)).chain((0..7).map(|i| score(i as f64, false))).collect();
        assert_eq!(auc(&good).unwrap(), 1.0);
        let flipped: Vec<_> = good.iter().map(|s| score(s.statistic, !s.is_member_truth.unwrap())).collect();
        assert_eq!(auc(&flipped).unwrap(), 0.0);
    }

    #[test]
    fn ties_give_diagonal_segment() {
        let c = roc_points(&[score(1.0, true), score(1.0, false)]).unwrap();
        assert_eq!(c.auc, 0.5);
        assert_eq!(c.points.len(), 2);
    }

    #[test]
    fn single_class_rejected() {
        assert!(roc_points(&[score(1.0, true), score(2.0, true)]).is_err());
        assert!(roc_points(&[]).is_err());
    }

    #[test]
    fn null_distribution_is_near_chance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let scores: Vec<_> = (0..10_000)
            .map(|i| score(StandardNormal.sample(&mut rng), i % 2 == 0))
            .collect();
        let a = auc(&scores).unwrap();
        assert!((0.47..=0.53).contains(&a), "{a}");
    }

    #[test]
    fn curve_is_monotone_and_auc_matches_mann_whitney() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let scores: Vec<_> = (0..300)
            .map(|i| {
                let m = i % 3 == 0;
                let v: f64 = StandardNormal.sample(&mut rng);
                score((v * 4.0).round() + if m { 1.0 } else { 0.0 }, m)
            })
            .collect();
        let c = roc_points(&scores).unwrap();
        for w in c.points.windows(2) {
            assert!(w[1].fpr >= w[0].fpr && w[1].tpr >= w[0].tpr);
            assert!(w[1].threshold < w[0].threshold);
        }
        let last = c.points.last().unwrap();
        assert_eq!((last.fpr, last.tpr), (1.0, 1.0));
        let (pos, neg): (Vec<_>, Vec<_>) = scores.iter().partition(|s| s.is_member_truth.unwrap());
        let mut u = 0.0;
        for p in &pos {
            for n in &neg {
                u += if p.statistic > n.statistic {
                    1.0
                } else if p.statistic == n.statistic {
                    0.5
                } else {
                    0.0
                };
            }
        }
        let mw = u / (pos.len() * neg.len()) as f64;
        assert!((c.auc - mw).abs() < 1e-12);
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let scores: Vec<_> = (0..200)
            .map(|i| {
                let v: f64 = StandardNormal.sample(&mut rng);
                score(v + (i % 2) as f64 * 0.5, i % 2 == 1)
            })
            .collect();
        let t: Vec<_> = scores.iter().map(|s| score(s.statistic.exp() * 3.0 - 1.0, s.is_member_truth.unwrap())).collect();
        assert!((auc(&scores).unwrap() - auc(&t).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn paired_difference_se_vanishes_for_identical_detectors() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let scores: Vec<_> = (0..200)
            .map(|i| {
                let v: f64 = StandardNormal.sample(&mut rng);
                let mut s = score(v + (i % 2) as f64, i % 2 == 1);
                s.trial = Some(i / 10);
                s
            })
            .collect();
        assert_eq!(bootstrap_auc_diff_se(&scores, &scores, 100, 1).unwrap(), 0.0);
        let shifted: Vec<_> = scores.iter().map(|s| MembershipScore { statistic: s.statistic * 2.0 + 1.0, ..s.clone() }).collect();
        assert_eq!(bootstrap_auc_diff_se(&scores, &shifted, 100, 1).unwrap(), 0.0);
        let mut untagged = scores.clone();
        untagged[0].trial = None;
        assert!(bootstrap_auc_diff_se(&untagged, &scores, 100, 1).is_err());
    }

    #[test]
    fn bootstrap_se_is_positive_and_deterministic() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let scores: Vec<_> = (0..400)
            .map(|i| {
                let v: f64 = StandardNormal.sample(&mut rng);
                let mut s = score(v + (i % 2) as f64, i % 2 == 1);
                s.trial = Some(i / 20);
                s
            })
            .collect();
        let a = bootstrap_auc_se(&scores, 200, 3).unwrap();
        assert_eq!(a, bootstrap_auc_se(&scores, 200, 3).unwrap());
        assert!(a > 0.0 && a < 0.1);
    }
}
