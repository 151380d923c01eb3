// SPDX-License-Identifier: Apache-2.0

//! Membership inference against a fingerprint estimate: was image `r` one of
//! the images `K̂` was estimated from?
//!
//! Two detectors are provided. The genie likelihood-ratio statistic needs the
//! normalizer `R`; normalized cross-correlation needs only `K̂` and the query
//! residual.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fingerprint::ResidualPair;
use crate::matrix::ImageMatrix;
use crate::window::{check_window, local_variance};

pub const DEFAULT_NP_WINDOW: usize = 5;
/// Variance floor of the NP detector as a fraction of `mean(K̂²)`.
pub const DEFAULT_FLOOR_FACTOR: f64 = 1e-12;
const NCC_MIN_STD: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Detector {
    #[serde(rename = "NP")]
    Np,
    #[serde(rename = "NCC")]
    Ncc,
}

impl fmt::Display for Detector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Detector::Np => "NP",
            Detector::Ncc => "NCC",
        })
    }
}

impl FromStr for Detector {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "NP" => Ok(Detector::Np),
            "NCC" => Ok(Detector::Ncc),
            _ => Err(Error::invalid(format!("unknown detector {s:?} (expected NP or NCC)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NpConfig {
    pub window: usize,
    pub floor_factor: f64,
}

impl Default for NpConfig {
    fn default() -> Self {
        Self {
            window: DEFAULT_NP_WINDOW,
            floor_factor: DEFAULT_FLOOR_FACTOR,
        }
    }
}

/// Everything the NP statistic is computed from.
#[derive(Clone, Debug, PartialEq)]
pub struct HypothesisContext {
    pub k_hat: ImageMatrix,
    /// Contribution of the query, `W_r∘X̂_r/R`.
    pub q: ImageMatrix,
    /// `K̂ - Q`, the estimate with the query removed.
    pub p: ImageMatrix,
    pub lambda_sq: ImageMatrix,
    pub theta_sq: ImageMatrix,
    pub window: usize,
}

impl HypothesisContext {
    pub fn new(k_hat: &ImageMatrix, w_r: &ImageMatrix, xhat_r: &ImageMatrix, r: &ImageMatrix, cfg: &NpConfig) -> Result<Self> {
        k_hat.ensure_shape(w_r)?;
        k_hat.ensure_shape(xhat_r)?;
        k_hat.ensure_shape(r)?;
        if r.data().iter().any(|&v| v <= 0.0) {
            return Err(Error::invalid("normalizer R must be strictly positive"));
        }
        let q = w_r.hadamard(xhat_r)?.zip_map(r, |num, den| num / den)?;
        Self::with_q(k_hat, q, cfg)
    }

    /// Context for a precomputed query contribution `q` (e.g. already
    /// carried through the same gain as `K̂`).
    pub fn with_q(k_hat: &ImageMatrix, q: ImageMatrix, cfg: &NpConfig) -> Result<Self> {
        check_window(cfg.window)?;
        k_hat.ensure_shape(&q)?;
        if !(cfg.floor_factor > 0.0) {
            return Err(Error::invalid("variance floor factor must be positive"));
        }
        let p = k_hat.sub(&q)?;
        let floor = (cfg.floor_factor * k_hat.sum_of_squares() / k_hat.len() as f64).max(f64::MIN_POSITIVE);
        let lambda_sq = local_variance(k_hat, cfg.window).map(|v| v.max(floor));
        let theta_sq = local_variance(&p, cfg.window).map(|v| v.max(floor));
        Ok(Self {
            k_hat: k_hat.clone(),
            q,
            p,
            lambda_sq,
            theta_sq,
            window: cfg.window,
        })
    }

    /// `Σ [ln(λ/θ) - P²/(2θ²) + K̂²/(2λ²)]`, natural log.
    pub fn statistic(&self) -> Result<f64> {
        let j: f64 = self
            .k_hat
            .data()
            .iter()
            .zip(self.p.data())
            .zip(self.lambda_sq.data().iter().zip(self.theta_sq.data()))
            .map(|((&k, &p), (&l2, &t2))| 0.5 * (l2 / t2).ln() - p * p / (2.0 * t2) + k * k / (2.0 * l2))
            .sum();
        if j.is_finite() {
            Ok(j)
        } else {
            Err(Error::Numerical("NP statistic is not finite".into()))
        }
    }
}

pub fn np_statistic(k_hat: &ImageMatrix, w_r: &ImageMatrix, xhat_r: &ImageMatrix, r: &ImageMatrix, cfg: &NpConfig) -> Result<f64> {
    HypothesisContext::new(k_hat, w_r, xhat_r, r, cfg)?.statistic()
}

pub fn np_statistic_with_q(k_hat: &ImageMatrix, q: ImageMatrix, cfg: &NpConfig) -> Result<f64> {
    HypothesisContext::with_q(k_hat, q, cfg)?.statistic()
}

/// Sample normalized cross-correlation (`n - 1` denominators).
pub fn ncc_statistic(k_hat: &ImageMatrix, w_r: &ImageMatrix) -> Result<f64> {
    k_hat.ensure_shape(w_r)?;
    let n = k_hat.len();
    if n < 2 {
        return Err(Error::invalid("correlation needs at least two pixels"));
    }
    let (sk, st) = (k_hat.sample_std(), w_r.sample_std());
    if !(sk > NCC_MIN_STD && st > NCC_MIN_STD) {
        return Err(Error::invalid("correlation of a constant image is undefined"));
    }
    let (mk, mt) = (k_hat.mean(), w_r.mean());
    let s: f64 = k_hat
        .data()
        .iter()
        .zip(w_r.data())
        .map(|(&k, &t)| (k - mk) * (t - mt))
        .sum();
    Ok(s / ((n - 1) as f64 * sk * st))
}

/// Strict threshold rule: member iff `statistic > psi`.
#[inline]
pub fn decide(statistic: f64, psi: f64) -> bool {
    statistic > psi
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipScore {
    pub statistic: f64,
    pub detector: Detector,
    pub image_id: String,
    pub is_member_truth: Option<bool>,
    /// Monte-Carlo trial the score came from, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trial: Option<usize>,
}

/// Query image for batch scoring.
#[derive(Clone, Debug)]
pub struct Query<'a> {
    pub image_id: String,
    pub pair: &'a ResidualPair,
    pub is_member_truth: Option<bool>,
}

/// Fingerprint side of a scoring run. `gain` is the pointwise factor already
/// applied to `fingerprint` (whitening), and is applied to `Q` as well.
#[derive(Clone, Copy, Debug)]
pub struct Target<'a> {
    pub fingerprint: &'a ImageMatrix,
    pub normalizer: Option<&'a ImageMatrix>,
    pub gain: Option<&'a ImageMatrix>,
}

pub fn score_one(target: &Target<'_>, query: &Query<'_>, detector: Detector, np: &NpConfig) -> Result<MembershipScore> {
    let statistic = match detector {
        Detector::Ncc => ncc_statistic(target.fingerprint, &query.pair.residual)?,
        Detector::Np => {
            let r = target
                .normalizer
                .ok_or_else(|| Error::invalid("the NP detector needs the normalizer R"))?;
            let ctx = HypothesisContext::new(target.fingerprint, &query.pair.residual, &query.pair.denoised, r, np)?;
            match target.gain {
                None => ctx.statistic()?,
                Some(g) => np_statistic_with_q(target.fingerprint, ctx.q.hadamard(g)?, np)?,
            }
        }
    };
    Ok(MembershipScore {
        statistic,
        detector,
        image_id: query.image_id.clone(),
        is_member_truth: query.is_member_truth,
        trial: None,
    })
}

/// Scores every query under every detector; output is query-major in input
/// order regardless of scheduling.
pub fn score_queries(target: &Target<'_>, queries: &[Query<'_>], detectors: &[Detector], np: &NpConfig) -> Result<Vec<MembershipScore>> {
    let nested: Vec<Vec<MembershipScore>> = queries
        .par_iter()
        .map(|q| detectors.iter().map(|&d| score_one(target, q, d, np)).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    Ok(nested.into_iter().flatten().collect())
}

pub const SCORE_CSV_HEADER: &str = "image_id,detector,statistic,is_member_truth";

/// CSV with the four score columns; a `trial` column is appended when any
/// score carries one.
pub fn write_scores_csv(out: &mut impl Write, scores: &[MembershipScore]) -> std::io::Result<()> {
    let with_trial = scores.iter().any(|s| s.trial.is_some());
    if with_trial {
        writeln!(out, "{SCORE_CSV_HEADER},trial")?;
    } else {
        writeln!(out, "{SCORE_CSV_HEADER}")?;
    }
    for s in scores {
        let truth = match s.is_member_truth {
            Some(true) => "true",
            Some(false) => "false",
            None => "",
        };
        write!(out, "{},{},{:e},{}", csv_field(&s.image_id), s.detector, s.statistic, truth)?;
        if with_trial {
            match s.trial {
                Some(t) => write!(out, ",{t}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn split_csv_line(line: &str) -> Vec<String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match (c, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => fields.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    fields.push(cur);
    fields
}

pub fn read_scores_csv(input: impl BufRead) -> Result<Vec<MembershipScore>> {
    let mut lines = input.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty scores file".into()))?
        .map_err(|e| Error::Format(e.to_string()))?;
    let header = header.trim_end_matches('\r');
    let with_trial = match header {
        h if h == SCORE_CSV_HEADER => false,
        h if h == format!("{SCORE_CSV_HEADER},trial") => true,
        h => return Err(Error::Format(format!("unexpected scores header {h:?}"))),
    };
    let mut scores = Vec::new();
    for (no, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::Format(e.to_string()))?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let bad = |what: &str| Error::Format(format!("scores line {}: {what}", no + 2));
        let f = split_csv_line(line);
        if f.len() != 4 + with_trial as usize {
            return Err(bad("wrong column count"));
        }
        let statistic: f64 = f[2].parse().map_err(|_| bad("statistic is not a number"))?;
        if !statistic.is_finite() {
            return Err(bad("statistic is not finite"));
        }
        let is_member_truth = match f[3].as_str() {
            "true" | "1" => Some(true),
            "false" | "0" => Some(false),
            "" => None,
            _ => return Err(bad("is_member_truth must be true, false or empty")),
        };
        let trial = if with_trial && !f[4].is_empty() {
            Some(f[4].parse().map_err(|_| bad("trial is not an integer"))?)
        } else {
            None
        };
        scores.push(MembershipScore {
            statistic,
            detector: f[1].parse().map_err(|_| bad("unknown detector"))?,
            image_id: f[0].clone(),
            is_member_truth,
            trial,
        });
    }
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn noise(rows: usize, cols: usize, sd: f64, seed: u64) -> ImageMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, sd).unwrap();
        ImageMatrix::from_fn(rows, cols, |_, _| n.sample(&mut rng))
    }

    #[test]
    fn ncc_self_and_negated() {
        let k = noise(32, 32, 0.1, 1);
        assert!((ncc_statistic(&k, &k).unwrap() - 1.0).abs() < 1e-12);
        assert!((ncc_statistic(&k, &k.scale(-1.0)).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn ncc_rejects_constant() {
        let k = noise(8, 8, 1.0, 1);
        assert!(ncc_statistic(&k, &ImageMatrix::filled(8, 8, 2.0)).is_err());
        assert!(ncc_statistic(&ImageMatrix::zeros(8, 8), &k).is_err());
        assert!(ncc_statistic(&k, &ImageMatrix::zeros(8, 9)).is_err());
    }

    #[test]
    fn ncc_null_is_small() {
        let k = noise(256, 256, 1.0, 2);
        let t = noise(256, 256, 3.0, 3);
        assert!(ncc_statistic(&k, &t).unwrap().abs() < 5.0 / 256.0);
    }

    #[test]
    fn np_zero_query_is_zero() {
        let k = noise(24, 24, 0.02, 4);
        let w = ImageMatrix::zeros(24, 24);
        let x = ImageMatrix::filled(24, 24, 100.0);
        let r = ImageMatrix::filled(24, 24, 2e5);
        let j = np_statistic(&k, &w, &x, &r, &NpConfig::default()).unwrap();
        assert_eq!(j, 0.0);
    }

    #[test]
    fn np_requires_positive_r_and_matching_dims() {
        let k = noise(8, 8, 1.0, 5);
        let x = ImageMatrix::filled(8, 8, 1.0);
        assert!(np_statistic(&k, &k, &x, &ImageMatrix::zeros(8, 8), &NpConfig::default()).is_err());
        assert!(np_statistic(&k, &k, &x, &ImageMatrix::filled(8, 7, 1.0), &NpConfig::default()).is_err());
        let t = Target {
            fingerprint: &k,
            normalizer: None,
            gain: None,
        };
        let pair = ResidualPair::new(k.clone(), x).unwrap();
        let q = Query {
            image_id: "a".into(),
            pair: &pair,
            is_member_truth: None,
        };
        assert!(score_one(&t, &q, Detector::Np, &NpConfig::default()).is_err());
        assert!(score_one(&t, &q, Detector::Ncc, &NpConfig::default()).is_ok());
    }

    #[test]
    fn np_flat_image_hits_floor_without_blowing_up() {
        let k = ImageMatrix::filled(16, 16, 0.0);
        let q = ImageMatrix::filled(16, 16, 0.0);
        assert_eq!(np_statistic_with_q(&k, q, &NpConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn decide_is_strict() {
        assert!(decide(0.5, 0.3));
        assert!(!decide(0.5, 0.5));
        assert!(decide(-1e300, f64::NEG_INFINITY));
    }

    #[test]
    fn detector_parsing() {
        assert_eq!("np".parse::<Detector>().unwrap(), Detector::Np);
        assert_eq!("NCC".parse::<Detector>().unwrap(), Detector::Ncc);
        assert!("pce".parse::<Detector>().is_err());
        assert_eq!(serde_json::to_string(&Detector::Np).unwrap(), "\"NP\"");
    }

    #[test]
    fn csv_round_trip() {
        let scores = vec![
            MembershipScore {
                statistic: 0.1 + 0.2,
                detector: Detector::Ncc,
                image_id: "img,1".into(),
                is_member_truth: Some(true),
                trial: None,
            },
            MembershipScore {
                statistic: -3.5e-300,
                detector: Detector::Np,
                image_id: "x\"y".into(),
                is_member_truth: None,
                trial: None,
            },
        ];
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &scores).unwrap();
        assert!(buf.starts_with(b"image_id,detector,statistic,is_member_truth\n"));
        assert_eq!(read_scores_csv(&buf[..]).unwrap(), scores);

        let mut with_trial = scores.clone();
        with_trial[0].trial = Some(7);
        let mut buf = Vec::new();
        write_scores_csv(&mut buf, &with_trial).unwrap();
        assert_eq!(read_scores_csv(&buf[..]).unwrap(), with_trial);
    }

    #[test]
    fn csv_rejects_garbage() {
        assert!(read_scores_csv(&b"a,b\n"[..]).is_err());
        assert!(read_scores_csv(&b"image_id,detector,statistic,is_member_truth\nx,NCC,nan,\n"[..]).is_err());
        assert!(read_scores_csv(&b"image_id,detector,statistic,is_member_truth\nx,NCC,1,maybe\n"[..]).is_err());
    }

    proptest! {
        #[test]
        fn ncc_affine_invariance(a in 0.01f64..100.0, b in -1e3f64..1e3, seed in 0u64..1000) {
            let k = noise(16, 16, 1.0, seed);
            let w = noise(16, 16, 1.0, seed + 10_000).add(&k.scale(0.3)).unwrap();
            let base = ncc_statistic(&k, &w).unwrap();
            let pos = ncc_statistic(&k, &w.map(|v| a * v + b)).unwrap();
            let neg = ncc_statistic(&k, &w.map(|v| -a * v + b)).unwrap();
            prop_assert!((base - pos).abs() < 1e-9);
            prop_assert!((base + neg).abs() < 1e-9);
        }

        #[test]
        fn ncc_bounded(rows in 2usize..12, cols in 2usize..12, seed in 0u64..10_000, mix in -1.0f64..1.0) {
            let k = noise(rows, cols, 1.0, seed);
            let w = noise(rows, cols, 1.0, seed ^ 0xdead).scale(1.0 - mix.abs()).add(&k.scale(mix)).unwrap();
            if w.sample_std() > 1e-12 {
                let n = (rows * cols) as f64;
                let j = ncc_statistic(&k, &w).unwrap();
                prop_assert!(j <= n / (n - 1.0) + 1e-12 && j >= -n / (n - 1.0) - 1e-12);
            }
        }
    }
}
