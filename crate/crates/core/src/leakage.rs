// SPDX-License-Identifier: Apache-2.0

//! Information Leakage Bound (ILB).
//!
//! The estimate is modelled as `K̂ = Ω∘K + N_k` with per-pixel estimation-noise
//! variance `γ²`. Treating each pixel as a parallel Gaussian channel carrying
//! `N_k` and disturbed by `Ω∘K`, the disturbance budget `P` (trace of the
//! covariance of `Ω∘K`) is spread to minimise mutual information. With
//! Lagrange multiplier `μ` the allocation on a pixel is
//! `p = ½γ²(√(1 + 4/(μγ²)) - 1)`, `μ` is fixed by `Σ p = P`, and the bound is
//! `½ Σ log₂(1 + 2/(√(1 + 4/(μγ²)) - 1))` bits.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset_io::{DatasetManifest, Role};
use crate::denoise::DenoiserSpec;
use crate::error::{Error, Result};
use crate::fingerprint::{
    accumulate_subset, load_residual_pool, postprocess, PostprocessConfig, ResidualPair, DEFAULT_EPSILON_R,
};
use crate::matrix::ImageMatrix;
use crate::rng::{derive_seed, stream_rng, Stream};
use crate::window::{check_window, local_variance};

/// Pixels with `γ²` at or below this are excluded from both sums (their
/// limiting contribution is zero).
pub const GAMMA_FLOOR: f64 = 1e-30;
pub const DEFAULT_GAMMA_WINDOW: usize = 5;
pub const DEFAULT_SPLITS: usize = 10;
pub const DEFAULT_REL_TOL: f64 = 1e-10;
/// `P̂` is clamped below at this fraction of `Σγ²`.
pub const P_FLOOR_FRACTION: f64 = 1e-12;
const MAX_BRACKET_STEPS: usize = 2200;
const MAX_BISECTIONS: usize = 400;

#[derive(Clone, Debug, PartialEq)]
pub struct GammaMap {
    pub map: ImageMatrix,
    /// Window of the local-variance estimator; 0 for the across-images method.
    pub window: usize,
}

impl GammaMap {
    pub fn values(&self) -> &[f64] {
        self.map.data()
    }

    pub fn pixels(&self) -> usize {
        self.map.len()
    }
}

/// How `γ²` is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaMethod {
    /// Local sample variance of `K̂` (estimation noise dominates `K̂`).
    #[default]
    LocalVariance,
    /// Per-pixel variance of the per-image terms `L·W∘X̂/R`, divided by `L`.
    AcrossImages,
}

/// `γ²` as the windowed variance of `K̂`.
pub fn estimate_gamma(k_hat: &ImageMatrix, window: usize) -> Result<GammaMap> {
    check_window(window)?;
    Ok(GammaMap {
        map: local_variance(k_hat, window),
        window,
    })
}

/// `γ²` from the spread of the individual image contributions to `K̂`.
pub fn estimate_gamma_across_images(pool: &[ResidualPair], indices: &[usize], normalizer: &ImageMatrix) -> Result<GammaMap> {
    let l = indices.len();
    if l < 2 {
        return Err(Error::invalid("across-images gamma needs at least 2 images"));
    }
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    let (rows, cols) = normalizer.shape();
    let mut sum = ImageMatrix::zeros(rows, cols);
    let mut sum_sq = ImageMatrix::zeros(rows, cols);
    let lf = l as f64;
    for &i in &sorted {
        let pair = pool.get(i).ok_or_else(|| Error::invalid(format!("index {i} out of range")))?;
        normalizer.ensure_shape(&pair.residual)?;
        let terms = pair
            .residual
            .data()
            .iter()
            .zip(pair.denoised.data())
            .zip(normalizer.data())
            .map(|((w, x), r)| lf * w * x / r);
        for ((s, q), t) in sum.data_mut().iter_mut().zip(sum_sq.data_mut().iter_mut()).zip(terms) {
            *s += t;
            *q += t * t;
        }
    }
    let map = sum.zip_map(&sum_sq, |s, q| {
        let mean = s / lf;
        ((q - lf * mean * mean) / (lf - 1.0)).max(0.0) / lf
    })?;
    Ok(GammaMap { map, window: 0 })
}

/// `√(1 + x) - 1` without cancellation for small `x`.
#[inline]
fn sqrt1p_m1(x: f64) -> f64 {
    x / ((1.0 + x).sqrt() + 1.0)
}

/// Disturbance power assigned to a channel of variance `gamma_sq` at multiplier `mu`.
#[inline]
pub fn allocation(gamma_sq: f64, mu: f64) -> f64 {
    0.5 * gamma_sq * sqrt1p_m1(4.0 / (mu * gamma_sq))
}

/// Left-hand side of the multiplier condition, `Σ allocation(γ², μ)`.
pub fn constraint_sum(gammas: &[f64], mu: f64) -> f64 {
    gammas
        .iter()
        .filter(|&&g| g > GAMMA_FLOOR)
        .map(|&g| allocation(g, mu))
        .sum()
}

/// Finds `μ` with `|constraint_sum(γ², μ) - P| <= rel_tol·P`.
///
/// The sum is strictly decreasing in `μ`; a bracket is grown by doubling or
/// halving from `μ₀ = n/P` and then refined by geometric bisection.
pub fn solve_mu(gammas: &[f64], p: f64, rel_tol: f64) -> Result<f64> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::invalid(format!("disturbance power must be positive, got {p}")));
    }
    if !(rel_tol > 0.0) {
        return Err(Error::invalid("rel_tol must be positive"));
    }
    if !gammas.iter().any(|&g| g > GAMMA_FLOOR) {
        return Err(Error::Numerical("every gamma^2 is below the floor".into()));
    }
    let g = |mu: f64| constraint_sum(gammas, mu);
    let converged = |v: f64| (v - p).abs() <= rel_tol * p;

    let mu0 = gammas.len() as f64 / p;
    let v0 = g(mu0);
    if converged(v0) {
        return Ok(mu0);
    }
    let (mut lo, mut hi) = (mu0, mu0);
    let mut steps = 0;
    if v0 > p {
        // μ too small
        loop {
            lo = hi;
            hi *= 2.0;
            steps += 1;
            if !hi.is_finite() || steps > MAX_BRACKET_STEPS {
                return Err(Error::Numerical("mu bracket exhausted (upper)".into()));
            }
            if g(hi) <= p {
                break;
            }
        }
    } else {
        loop {
            hi = lo;
            lo *= 0.5;
            steps += 1;
            if lo == 0.0 || steps > MAX_BRACKET_STEPS {
                return Err(Error::Numerical("mu bracket exhausted (lower)".into()));
            }
            if g(lo) >= p {
                break;
            }
        }
    }

    let mut best = (f64::INFINITY, mu0);
    for _ in 0..MAX_BISECTIONS {
        let mid = (lo * hi).sqrt();
        let v = g(mid);
        let err = (v - p).abs();
        if err < best.0 {
            best = (err, mid);
        }
        if converged(v) {
            return Ok(mid);
        }
        if v > p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi / lo - 1.0 <= 4.0 * f64::EPSILON {
            break;
        }
    }
    if best.0 <= rel_tol * p {
        Ok(best.1)
    } else {
        Err(Error::Numerical(format!(
            "mu bisection stalled at relative error {:e}",
            best.0 / p
        )))
    }
}

/// Bits leaked by one channel at multiplier `mu`.
#[inline]
pub fn channel_bits(gamma_sq: f64, mu: f64) -> f64 {
    if gamma_sq <= GAMMA_FLOOR {
        return 0.0;
    }
    0.5 * (2.0 / sqrt1p_m1(4.0 / (mu * gamma_sq))).ln_1p() / std::f64::consts::LN_2
}

/// Total ILB in bits over all channels.
pub fn ilb_bits(gammas: &[f64], mu: f64) -> f64 {
    gammas.iter().map(|&g| channel_bits(g, mu)).sum()
}

/// `(bits, bits per pixel)` for a γ² map.
pub fn ilb(gamma: &GammaMap, mu: f64) -> (f64, f64) {
    let bits = ilb_bits(gamma.values(), mu);
    (bits, bits / gamma.pixels() as f64)
}

/// Bound for arbitrary channel variances and budget: solve for `μ`, evaluate.
pub fn ilb_for_budget(gammas: &[f64], p: f64) -> Result<f64> {
    if !gammas.iter().any(|&g| g > GAMMA_FLOOR) {
        return Ok(0.0);
    }
    let mu = solve_mu(gammas, p, DEFAULT_REL_TOL)?;
    Ok(ilb_bits(gammas, mu))
}

/// Brute-force reference: minimises `Σ ½log₂(1 + γᵢ²/pᵢ)` over the simplex
/// `Σ pᵢ = P, pᵢ >= 0` by pairwise exchange, each two-channel subproblem being
/// solved with golden-section search. Does not use the multiplier formulas.
pub fn ilb_oracle(gammas: &[f64], p: f64) -> Result<f64> {
    if gammas.len() > 16 {
        return Err(Error::invalid("oracle supports at most 16 channels"));
    }
    if !(p > 0.0) {
        return Err(Error::invalid("budget must be positive"));
    }
    let active: Vec<f64> = gammas.iter().copied().filter(|&g| g > GAMMA_FLOOR).collect();
    let n = active.len();
    if n == 0 {
        return Ok(0.0);
    }
    let term = |g: f64, q: f64| {
        if q <= 0.0 {
            f64::INFINITY
        } else {
            0.5 * (g / q).ln_1p() / std::f64::consts::LN_2
        }
    };
    let objective = |alloc: &[f64]| -> f64 { active.iter().zip(alloc).map(|(&g, &q)| term(g, q)).sum() };

    let mut alloc = vec![p / n as f64; n];
    let mut value = objective(&alloc);
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    for _sweep in 0..20_000 {
        let before = value;
        for i in 0..n {
            for j in i + 1..n {
                let total = alloc[i] + alloc[j];
                let pair = |a: f64| term(active[i], a) + term(active[j], total - a);
                let (mut a, mut b) = (0.0, total);
                let mut c = b - INV_PHI * (b - a);
                let mut d = a + INV_PHI * (b - a);
                let (mut fc, mut fd) = (pair(c), pair(d));
                for _ in 0..120 {
                    if fc < fd {
                        b = d;
                        d = c;
                        fd = fc;
                        c = b - INV_PHI * (b - a);
                        fc = pair(c);
                    } else {
                        a = c;
                        c = d;
                        fc = fd;
                        d = a + INV_PHI * (b - a);
                        fd = pair(d);
                    }
                }
                let candidate = 0.5 * (a + b);
                if pair(candidate) < pair(alloc[i]) {
                    alloc[i] = candidate;
                    alloc[j] = total - candidate;
                }
            }
        }
        value = objective(&alloc);
        if before - value <= 1e-15 * value.abs().max(1e-300) {
            break;
        }
    }
    Ok(value)
}

/// Frobenius cross-product of two split estimates, `⟨K̂₁, K̂₂⟩_F`.
pub fn split_power(k1: &ImageMatrix, k2: &ImageMatrix) -> Result<f64> {
    k1.frobenius_dot(k2)
}

/// Mean of the split samples, clamped below at `P_FLOOR_FRACTION·Σγ²`.
/// Returns `(P̂, clamped)`.
pub fn clamp_power(samples: &[f64], gamma_sum: f64) -> (f64, bool) {
    let mean = samples.iter().sum::<f64>() / samples.len().max(1) as f64;
    let floor = P_FLOOR_FRACTION * gamma_sum;
    if mean < floor || !mean.is_finite() {
        (floor, true)
    } else {
        (mean, false)
    }
}

/// One `⟨K̂₁, K̂₂⟩_F` sample per random halving of `indices`
/// (sizes `⌊L/2⌋` and `⌈L/2⌉`). Split `s` shuffles with a seed derived from
/// `(seed, s)`, so results do not depend on the thread count.
pub fn split_samples(
    pool: &[ResidualPair],
    indices: &[usize],
    splits: usize,
    seed: u64,
    post: &PostprocessConfig,
    epsilon_r: f64,
) -> Result<Vec<f64>> {
    if indices.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 images to split, got {}", indices.len())));
    }
    if splits == 0 {
        return Err(Error::invalid("split count must be >= 1"));
    }
    let mut base = indices.to_vec();
    base.sort_unstable();
    (0..splits)
        .into_par_iter()
        .map(|s| {
            let mut order = base.clone();
            let mut rng = stream_rng(derive_seed(seed, Stream::Split, s as u64), Stream::Split);
            order.shuffle(&mut rng);
            let (first, second) = order.split_at(order.len() / 2);
            let half = |idx: &[usize]| -> Result<ImageMatrix> {
                let raw = accumulate_subset(pool, idx)?.finalize(epsilon_r)?.bundle.fingerprint;
                Ok(postprocess(&raw, post)?.0)
            };
            split_power(&half(first)?, &half(second)?)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageConfig {
    pub gamma_window: usize,
    pub gamma_method: GammaMethod,
    pub splits: usize,
    pub seed: u64,
    pub epsilon_r: f64,
    pub rel_tol: f64,
    /// Applied to `K̂` and to both split estimates.
    pub postprocess: PostprocessConfig,
}

impl Default for LeakageConfig {
    fn default() -> Self {
        Self {
            gamma_window: DEFAULT_GAMMA_WINDOW,
            gamma_method: GammaMethod::LocalVariance,
            splits: DEFAULT_SPLITS,
            seed: 0,
            epsilon_r: DEFAULT_EPSILON_R,
            rel_tol: DEFAULT_REL_TOL,
            postprocess: PostprocessConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaStats {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl GammaStats {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        GammaStats {
            min: v[0],
            median,
            max: v[n - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub rows: usize,
    pub cols: usize,
    pub image_count: usize,
    pub p_hat: f64,
    pub splits: usize,
    pub p_samples: Vec<f64>,
    /// `P̂` hit the floor (mean split product was not positive enough).
    pub p_clamped: bool,
    pub mu: f64,
    pub ilb_bits: f64,
    pub ilb_bpp: f64,
    pub gamma_stats: GammaStats,
    pub excluded_pixels: usize,
    pub guarded_pixels: usize,
}

/// Full leakage analysis of the estimate built from `pool[indices]`.
pub fn analyze(pool: &[ResidualPair], indices: &[usize], cfg: &LeakageConfig) -> Result<LeakageReport> {
    let finalized = accumulate_subset(pool, indices)?.finalize(cfg.epsilon_r)?;
    let (k_hat, _) = postprocess(&finalized.bundle.fingerprint, &cfg.postprocess)?;
    let gamma = match cfg.gamma_method {
        GammaMethod::LocalVariance => estimate_gamma(&k_hat, cfg.gamma_window)?,
        GammaMethod::AcrossImages => {
            let r = finalized.bundle.normalizer.as_ref().expect("finalize stores R");
            estimate_gamma_across_images(pool, indices, r)?
        }
    };
    let samples = split_samples(pool, indices, cfg.splits, cfg.seed, &cfg.postprocess, cfg.epsilon_r)?;
    let gamma_sum: f64 = gamma.values().iter().filter(|&&g| g > GAMMA_FLOOR).sum();
    let (p_hat, p_clamped) = clamp_power(&samples, gamma_sum);
    let mu = solve_mu(gamma.values(), p_hat, cfg.rel_tol)?;
    let (bits, bpp) = ilb(&gamma, mu);
    Ok(LeakageReport {
        rows: k_hat.rows(),
        cols: k_hat.cols(),
        image_count: indices.len(),
        p_hat,
        splits: cfg.splits,
        p_samples: samples,
        p_clamped,
        mu,
        ilb_bits: bits,
        ilb_bpp: bpp,
        gamma_stats: GammaStats::of(gamma.values()),
        excluded_pixels: gamma.values().iter().filter(|&&g| g <= GAMMA_FLOOR).count(),
        guarded_pixels: finalized.guarded_pixels,
    })
}

/// `l` distinct indices out of `0..n`, sorted; all of them when `l == n`.
pub fn choose_subset(n: usize, l: usize, seed: u64) -> Result<Vec<usize>> {
    if l > n {
        return Err(Error::invalid(format!("requested {l} images but only {n} are available")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    if l < n {
        let mut rng = stream_rng(seed, Stream::Subset);
        idx.shuffle(&mut rng);
        idx.truncate(l);
        idx.sort_unstable();
    }
    Ok(idx)
}

/// Denoises the estimation images of `manifest`, picks `l` of them with the
/// config seed and runs [`analyze`].
pub fn leakage_report(manifest: &DatasetManifest, l: usize, denoiser: &DenoiserSpec, cfg: &LeakageConfig) -> Result<LeakageReport> {
    let entries: Vec<_> = manifest.with_role(Role::Estimation).collect();
    let chosen = choose_subset(entries.len(), l, cfg.seed)?;
    let picked: Vec<_> = chosen.iter().map(|&i| entries[i]).collect();
    let pool = load_residual_pool(manifest, &picked, denoiser)?;
    let all: Vec<usize> = (0..pool.len()).collect();
    analyze(&pool, &all, cfg)
}
