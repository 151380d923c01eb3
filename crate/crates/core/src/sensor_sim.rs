// SPDX-License-Identifier: Apache-2.0

//! Synthetic sensor following `Y = (1 + K)∘X + N`, with a known PRNU `K`
//! so every downstream statistic can be checked against ground truth.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix::ImageMatrix;
use crate::rng::{stream_rng, Stream};
use crate::window::gaussian_blur;

/// Default PRNU strength; not taken from any measured camera.
pub const DEFAULT_SIGMA_K: f64 = 0.02;
/// Default additive noise std in luminance levels; also a toolkit choice.
pub const DEFAULT_SIGMA_N: f64 = 2.0;
/// Flat-field levels for the bright/dark cardboard sets. Level 0 would make
/// the multiplicative term unidentifiable.
pub const BRIGHT_LEVEL: f64 = 240.0;
pub const DARK_LEVEL: f64 = 16.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SensorGroundTruth {
    pub k: ImageMatrix,
    pub sigma_k: f64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CaptureConfig {
    pub sigma_n: f64,
    pub clip_to_8bit: bool,
    pub seed: u64,
}

impl CaptureConfig {
    pub fn new(sigma_n: f64, seed: u64) -> Self {
        Self {
            sigma_n,
            clip_to_8bit: false,
            seed,
        }
    }
}

/// Draws `K` i.i.d. `N(0, sigma_k²)` from the PRNU stream of `seed`.
pub fn gen_prnu(rows: usize, cols: usize, sigma_k: f64, seed: u64) -> Result<SensorGroundTruth> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("sensor dimensions must be positive"));
    }
    if !(sigma_k >= 0.0 && sigma_k.is_finite()) {
        return Err(Error::invalid(format!("sigma_k must be >= 0, got {sigma_k}")));
    }
    let k = if sigma_k == 0.0 {
        ImageMatrix::zeros(rows, cols)
    } else {
        let mut rng = stream_rng(seed, Stream::Prnu);
        ImageMatrix::from_fn(rows, cols, |_, _| sigma_k * rng.sample::<f64, _>(StandardNormal))
    };
    Ok(SensorGroundTruth { k, sigma_k, seed })
}

/// One exposure of scene `x` through `sensor`.
pub fn capture(x: &ImageMatrix, sensor: &SensorGroundTruth, cfg: &CaptureConfig) -> Result<ImageMatrix> {
    sensor.k.ensure_shape(x)?;
    if !(cfg.sigma_n >= 0.0 && cfg.sigma_n.is_finite()) {
        return Err(Error::invalid(format!("sigma_n must be >= 0, got {}", cfg.sigma_n)));
    }
    let mut rng = stream_rng(cfg.seed, Stream::Noise);
    let data = x
        .data()
        .iter()
        .zip(sensor.k.data())
        .map(|(&xv, &kv)| {
            let noise = if cfg.sigma_n > 0.0 {
                cfg.sigma_n * rng.sample::<f64, _>(StandardNormal)
            } else {
                0.0
            };
            let y = (1.0 + kv) * xv + noise;
            if cfg.clip_to_8bit {
                y.round().clamp(0.0, 255.0)
            } else {
                y
            }
        })
        .collect();
    ImageMatrix::new(x.rows(), x.cols(), data)
}

pub fn flat_field(rows: usize, cols: usize, level: f64) -> Result<ImageMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("flat field dimensions must be positive"));
    }
    if !(0.0..=255.0).contains(&level) {
        return Err(Error::invalid(format!("flat-field level {level} outside [0, 255]")));
    }
    Ok(ImageMatrix::filled(rows, cols, level))
}

/// Pseudo-natural scene: uniform noise on `[0, 255]` blurred by a Gaussian of
/// std `smoothness`.
pub fn textured_field(rows: usize, cols: usize, seed: u64, smoothness: f64) -> Result<ImageMatrix> {
    if rows == 0 || cols == 0 {
        return Err(Error::invalid("texture dimensions must be positive"));
    }
    if !(smoothness >= 0.0 && smoothness.is_finite()) {
        return Err(Error::invalid(format!("smoothness must be >= 0, got {smoothness}")));
    }
    let mut rng = stream_rng(seed, Stream::Texture);
    let noise = ImageMatrix::from_fn(rows, cols, |_, _| rng.random_range(0.0..=255.0));
    Ok(gaussian_blur(&noise, smoothness))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_sigma_k_gives_zero_prnu() {
        let s = gen_prnu(4, 5, 0.0, 1).unwrap();
        assert!(s.k.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prnu_is_deterministic() {
        let a = gen_prnu(16, 16, 0.02, 42).unwrap();
        let b = gen_prnu(16, 16, 0.02, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.k, gen_prnu(16, 16, 0.02, 43).unwrap().k);
    }

    #[test]
    fn prnu_moments_at_256() {
        let s = gen_prnu(256, 256, 0.02, 5).unwrap();
        let std = s.k.sample_std();
        assert!((0.018..=0.022).contains(&std), "std {std}");
        let tol = 5.0 * 0.02 / (256.0f64 * 256.0).sqrt();
        assert!(s.k.mean().abs() < tol);
    }

    #[test]
    fn noiseless_capture_without_prnu_is_identity() {
        let x = textured_field(8, 8, 3, 1.0).unwrap();
        let s = gen_prnu(8, 8, 0.0, 1).unwrap();
        assert_eq!(capture(&x, &s, &CaptureConfig::new(0.0, 9)).unwrap(), x);
    }

    #[test]
    fn noiseless_capture_applies_gain() {
        let x = flat_field(2, 2, 100.0).unwrap();
        let mut s = gen_prnu(2, 2, 0.0, 1).unwrap();
        s.k[(0, 0)] = 0.02;
        let y = capture(&x, &s, &CaptureConfig::new(0.0, 1)).unwrap();
        assert_eq!(y[(0, 0)], 102.0);
        assert_eq!(y[(1, 1)], 100.0);
    }

    #[test]
    fn noise_moments() {
        let (m, n) = (256, 256);
        let x = flat_field(m, n, 128.0).unwrap();
        let s = gen_prnu(m, n, 0.02, 11).unwrap();
        let y = capture(&x, &s, &CaptureConfig::new(2.0, 12)).unwrap();
        let clean = x.zip_map(&s.k, |xv, kv| (1.0 + kv) * xv).unwrap();
        let noise = y.sub(&clean).unwrap();
        let mn = (m * n) as f64;
        assert!(noise.mean().abs() < 5.0 * 2.0 / mn.sqrt());
        assert!((noise.sample_std() / 2.0 - 1.0).abs() < 5.0 / mn.sqrt());
    }

    #[test]
    fn clipping_quantizes() {
        let x = ImageMatrix::new(1, 3, vec![-10.0, 100.4, 300.0]).unwrap();
        let s = gen_prnu(1, 3, 0.0, 1).unwrap();
        let cfg = CaptureConfig {
            sigma_n: 0.0,
            clip_to_8bit: true,
            seed: 0,
        };
        assert_eq!(capture(&x, &s, &cfg).unwrap().data(), &[0.0, 100.0, 255.0]);
    }

    #[test]
    fn capture_checks_dims() {
        let s = gen_prnu(2, 2, 0.01, 1).unwrap();
        let x = flat_field(2, 3, 1.0).unwrap();
        assert!(matches!(
            capture(&x, &s, &CaptureConfig::new(1.0, 1)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn flat_fields() {
        assert_eq!(flat_field(2, 2, 128.0).unwrap().data(), &[128.0; 4]);
        assert_eq!(flat_field(1, 1, 0.0).unwrap().data(), &[0.0]);
        assert!(flat_field(1, 1, 256.0).is_err());
        let bright = flat_field(4, 4, BRIGHT_LEVEL).unwrap();
        let dark = flat_field(4, 4, DARK_LEVEL).unwrap();
        assert!(bright.mean() > dark.mean());
    }

    #[test]
    fn texture_properties() {
        let raw = textured_field(32, 32, 4, 0.0).unwrap();
        assert!(raw.min() >= 0.0 && raw.max() <= 255.0);
        assert_eq!(raw, textured_field(32, 32, 4, 0.0).unwrap());

        let smooth = textured_field(256, 256, 4, 8.0).unwrap();
        assert!(smooth.min() >= 0.0 && smooth.max() <= 255.0);
        let mean = smooth.mean();
        let (mut num, mut den) = (0.0, 0.0);
        for r in 0..256 {
            for c in 0..256 {
                let d = smooth[(r, c)] - mean;
                den += d * d;
                if c + 1 < 256 {
                    num += d * (smooth[(r, c + 1)] - mean);
                }
            }
        }
        assert!(num / den > 0.9, "lag-1 autocorrelation {}", num / den);
    }
}
