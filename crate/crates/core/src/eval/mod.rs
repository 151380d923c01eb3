// SPDX-License-Identifier: Apache-2.0

//! Monte-Carlo membership experiments on synthetic or loaded image pools.

pub mod roc;
pub mod svg;

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoise::DenoiserSpec;
use crate::error::{Error, Result};
use crate::fingerprint::{accumulate_subset, postprocess, whitening_gain, PostprocessConfig, ResidualPair, DEFAULT_EPSILON_R};
use crate::matrix::ImageMatrix;
use crate::membership::{score_queries, Detector, MembershipScore, NpConfig, Query, Target};
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::sensor_sim::{capture, flat_field, gen_prnu, textured_field, CaptureConfig, SensorGroundTruth, DEFAULT_SIGMA_K, DEFAULT_SIGMA_N};

pub use roc::{auc, bootstrap_auc_diff_se, bootstrap_auc_se, roc_points, write_roc_csv, RocCurve, RocPoint, DEFAULT_BOOTSTRAP};

pub const DEFAULT_TEXTURE_SMOOTHNESS: f64 = 1.5;
pub const DEFAULT_MEMBER_QUERIES: usize = 25;
pub const DEFAULT_NON_MEMBER_QUERIES: usize = 25;

/// Scene content of one synthetic capture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scene {
    Flat { level: f64 },
    Textured { smoothness: f64 },
}

impl Scene {
    /// Noise-free scene for image `index` of a pool seeded with `seed`.
    pub fn render(&self, rows: usize, cols: usize, seed: u64, index: usize) -> Result<ImageMatrix> {
        match *self {
            Scene::Flat { level } => flat_field(rows, cols, level),
            Scene::Textured { smoothness } => {
                textured_field(rows, cols, derive_seed(seed, Stream::Texture, index as u64), smoothness)
            }
        }
    }
}

/// A synthetic camera and the scenes it captures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticPoolSpec {
    pub rows: usize,
    pub cols: usize,
    pub sigma_k: f64,
    pub sigma_n: f64,
    /// Round and clamp captures to `[0, 255]`.
    pub clip_to_8bit: bool,
    pub scenes: Vec<Scene>,
    pub seed: u64,
}

impl SyntheticPoolSpec {
    pub fn uniform(rows: usize, cols: usize, count: usize, scene: Scene, seed: u64) -> Self {
        Self {
            rows,
            cols,
            sigma_k: DEFAULT_SIGMA_K,
            sigma_n: DEFAULT_SIGMA_N,
            clip_to_8bit: false,
            scenes: vec![scene; count],
            seed,
        }
    }

    pub fn sensor(&self) -> Result<SensorGroundTruth> {
        gen_prnu(self.rows, self.cols, self.sigma_k, self.seed)
    }

    /// `(scene, capture)` of image `index`.
    pub fn capture(&self, sensor: &SensorGroundTruth, index: usize) -> Result<(ImageMatrix, ImageMatrix)> {
        let scene = self
            .scenes
            .get(index)
            .ok_or_else(|| Error::invalid(format!("image {index} out of range")))?;
        let x = scene.render(self.rows, self.cols, self.seed, index)?;
        let cfg = CaptureConfig {
            sigma_n: self.sigma_n,
            clip_to_8bit: self.clip_to_8bit,
            seed: derive_seed(self.seed, Stream::Noise, index as u64),
        };
        let y = capture(&x, sensor, &cfg)?;
        Ok((x, y))
    }
}

#[derive(Clone, Debug)]
pub struct Pool {
    pub sensor: SensorGroundTruth,
    pub pairs: Vec<ResidualPair>,
}

/// Captures and denoises every scene of `spec`. The oracle denoiser receives
/// the noise-free scene.
pub fn generate_pool(spec: &SyntheticPoolSpec, denoiser: &DenoiserSpec) -> Result<Pool> {
    let sensor = spec.sensor()?;
    let pairs = (0..spec.scenes.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = spec.capture(&sensor, i)?;
            ResidualPair::from_capture(&y, denoiser, Some(&x))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Pool { sensor, pairs })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub l: usize,
    pub n_trials: usize,
    pub detectors: Vec<Detector>,
    /// Member queries per trial, taken from the estimation set.
    pub members: usize,
    /// Non-member queries per trial, drawn from images outside the estimation set.
    pub non_members: usize,
    pub seed: u64,
    pub postprocess: PostprocessConfig,
    pub np: NpConfig,
    pub epsilon_r: f64,
}

impl TrialConfig {
    pub fn new(l: usize, n_trials: usize, seed: u64) -> Self {
        Self {
            l,
            n_trials,
            detectors: vec![Detector::Np, Detector::Ncc],
            members: DEFAULT_MEMBER_QUERIES.min(l),
            non_members: DEFAULT_NON_MEMBER_QUERIES,
            seed,
            postprocess: PostprocessConfig::default(),
            np: NpConfig::default(),
            epsilon_r: DEFAULT_EPSILON_R,
        }
    }

    /// Same configuration at another `L`; member queries are capped at `L`.
    pub fn with_l(&self, l: usize) -> Self {
        Self {
            l,
            members: self.members.min(l),
            ..self.clone()
        }
    }

    pub fn validate(&self, pool_size: usize) -> Result<()> {
        if self.l == 0 {
            return Err(Error::invalid("L must be >= 1"));
        }
        if self.members > self.l {
            return Err(Error::invalid(format!("{} member queries exceed L = {}", self.members, self.l)));
        }
        if self.l + self.non_members > pool_size {
            return Err(Error::invalid(format!(
                "pool of {pool_size} images is smaller than L + non-members = {}",
                self.l + self.non_members
            )));
        }
        if self.detectors.is_empty() {
            return Err(Error::invalid("no detectors selected"));
        }
        Ok(())
    }
}

/// Estimate and score target for one estimation set.
pub struct TrialTarget {
    pub fingerprint: ImageMatrix,
    pub normalizer: ImageMatrix,
    pub gain: Option<ImageMatrix>,
}

impl TrialTarget {
    pub fn build(pool: &[ResidualPair], estimation: &[usize], post: &PostprocessConfig, epsilon_r: f64) -> Result<Self> {
        let finalized = accumulate_subset(pool, estimation)?.finalize(epsilon_r)?;
        let raw = finalized.bundle.fingerprint;
        let normalizer = finalized.bundle.normalizer.expect("finalize stores R");
        let (fingerprint, gain) = if post.whiten {
            let pre = postprocess(&raw, &PostprocessConfig { whiten: false, ..*post })?.0;
            let gain = whitening_gain(&pre, post.whiten_window)?;
            (pre.hadamard(&gain)?, Some(gain))
        } else {
            (postprocess(&raw, post)?.0, None)
        };
        Ok(Self {
            fingerprint,
            normalizer,
            gain,
        })
    }

    pub fn target(&self) -> Target<'_> {
        Target {
            fingerprint: &self.fingerprint,
            normalizer: Some(&self.normalizer),
            gain: self.gain.as_ref(),
        }
    }
}

/// Labeled scores of `cfg.n_trials` independent trials, in trial order. Each
/// trial shuffles the pool with its own derived seed: the first `L` images
/// form the estimation set, its first `members` are the member queries and
/// the next `non_members` images are the non-member queries.
pub fn run_trials(pool: &[ResidualPair], cfg: &TrialConfig) -> Result<Vec<MembershipScore>> {
    if cfg.n_trials == 0 {
        return Ok(Vec::new());
    }
    cfg.validate(pool.len())?;
    let per_trial: Vec<Vec<MembershipScore>> = (0..cfg.n_trials)
        .into_par_iter()
        .map(|t| {
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.shuffle(&mut stream_rng(derive_seed(cfg.seed, Stream::Trial, t as u64), Stream::Trial));
            let estimation = &order[..cfg.l];
            let target = TrialTarget::build(pool, estimation, &cfg.postprocess, cfg.epsilon_r)?;
            let queries: Vec<Query<'_>> = estimation[..cfg.members]
                .iter()
                .map(|&i| (i, true))
                .chain(order[cfg.l..cfg.l + cfg.non_members].iter().map(|&i| (i, false)))
                .map(|(i, member)| Query {
                    image_id: format!("img{i:05}"),
                    pair: &pool[i],
                    is_member_truth: Some(member),
                })
                .collect();
            let mut scores = score_queries(&target.target(), &queries, &cfg.detectors, &cfg.np)?;
            for s in &mut scores {
                s.trial = Some(t);
            }
            Ok(scores)
        })
        .collect::<Result<_>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

/// Scores every pool image against the estimate from the first `l` images
/// (members first, then the rest).
pub fn statistic_trace(pool: &[ResidualPair], l: usize, detectors: &[Detector], post: &PostprocessConfig, np: &NpConfig) -> Result<Vec<MembershipScore>> {
    if l == 0 || l > pool.len() {
        return Err(Error::invalid(format!("L = {l} must be in 1..={}", pool.len())));
    }
    let estimation: Vec<usize> = (0..l).collect();
    let target = TrialTarget::build(pool, &estimation, post, DEFAULT_EPSILON_R)?;
    let queries: Vec<Query<'_>> = pool
        .iter()
        .enumerate()
        .map(|(i, pair)| Query {
            image_id: format!("img{i:05}"),
            pair,
            is_member_truth: Some(i < l),
        })
        .collect();
    score_queries(&target.target(), &queries, detectors, np)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub detector: Detector,
    pub l: usize,
    pub auc: f64,
    pub se: f64,
    pub n_trials: usize,
}

pub const MIN_COMPARE_TRIALS: usize = 30;

/// All labeled scores plus one summary row and curve per detector.
pub type Evaluation = (Vec<MembershipScore>, Vec<(AucRow, RocCurve)>);

/// Runs the trials of one configuration and summarizes each detector.
pub fn evaluate(pool: &[ResidualPair], cfg: &TrialConfig) -> Result<Evaluation> {
    let scores = run_trials(pool, cfg)?;
    let mut out = Vec::new();
    for &d in &cfg.detectors {
        let sub: Vec<MembershipScore> = scores.iter().filter(|s| s.detector == d).cloned().collect();
        let mut curve = roc_points(&sub)?;
        curve.l = Some(cfg.l);
        let se = bootstrap_auc_se(&sub, DEFAULT_BOOTSTRAP, derive_seed(cfg.seed, Stream::Bootstrap, cfg.l as u64))?;
        let row = AucRow {
            detector: d,
            l: cfg.l,
            auc: curve.auc,
            se,
            n_trials: cfg.n_trials,
        };
        out.push((row, curve));
    }
    Ok((scores, out))
}

/// AUC and bootstrap SE for every `(L, detector)`; all detectors of one `L`
/// share the same trials.
pub fn auc_compare(pool: &[ResidualPair], l_values: &[usize], base: &TrialConfig) -> Result<Vec<AucRow>> {
    check_compare(l_values, base)?;
    let mut rows = Vec::new();
    for &l in l_values {
        let (_, summary) = evaluate(pool, &base.with_l(l))?;
        rows.extend(summary.into_iter().map(|(row, _)| row));
    }
    Ok(rows)
}

pub fn check_compare(l_values: &[usize], base: &TrialConfig) -> Result<()> {
    if base.n_trials < MIN_COMPARE_TRIALS {
        return Err(Error::invalid(format!("AUC comparison needs at least {MIN_COMPARE_TRIALS} trials")));
    }
    if l_values.is_empty() || l_values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("L values must be non-empty and strictly ascending"));
    }
    Ok(())
}

pub fn write_auc_csv(out: &mut impl Write, rows: &[AucRow]) -> std::io::Result<()> {
    writeln!(out, "detector,L,auc,se,n_trials")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.detector, r.l, r.auc, r.se, r.n_trials)?;
    }
    Ok(())
}
