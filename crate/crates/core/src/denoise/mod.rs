// SPDX-License-Identifier: Apache-2.0

//! Denoising filters producing `X̂`, and the residual `W = Y - X̂`.

mod wavelet;

pub use self::wavelet::{dwt2, idwt2, max_levels, DetailBands, WaveletPyramid, DB8_LOWPASS};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::ImageMatrix;
use crate::window::{box_mean, gaussian_blur, reflect};

pub const DEFAULT_SIGMA0: f64 = 5.0;
pub const DEFAULT_LEVELS: usize = 4;
/// Local-variance windows of the wavelet shrinkage rule.
pub const SHRINK_WINDOWS: [usize; 4] = [3, 5, 7, 9];
/// Mirrored border added before the periodized transform.
const BOUNDARY_MARGIN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DenoiserSpec {
    /// Locally adaptive Wiener shrinkage of Daubechies-8 detail coefficients.
    WaveletMihcak { sigma0: f64, levels: usize },
    GaussianBlur { blur_sigma: f64 },
    /// Returns the true scene (`Δ = 0`, `Ω = 1`); simulation only.
    Oracle,
}

impl Default for DenoiserSpec {
    fn default() -> Self {
        DenoiserSpec::WaveletMihcak {
            sigma0: DEFAULT_SIGMA0,
            levels: DEFAULT_LEVELS,
        }
    }
}

impl DenoiserSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DenoiserSpec::WaveletMihcak { sigma0, levels } => {
                if !(sigma0 > 0.0 && sigma0.is_finite()) {
                    return Err(Error::invalid(format!("sigma0 must be positive, got {sigma0}")));
                }
                if levels == 0 {
                    return Err(Error::invalid("wavelet levels must be >= 1"));
                }
            }
            DenoiserSpec::GaussianBlur { blur_sigma } => {
                if !(blur_sigma > 0.0 && blur_sigma.is_finite()) {
                    return Err(Error::invalid(format!("blur_sigma must be positive, got {blur_sigma}")));
                }
            }
            DenoiserSpec::Oracle => {}
        }
        Ok(())
    }

    /// Identifier recorded in fingerprint bundles, e.g. `mihcak-db8-l4-s5.0`.
    pub fn id(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for DenoiserSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenoiserSpec::WaveletMihcak { sigma0, levels } => write!(f, "mihcak-db8-l{levels}-s{sigma0:?}"),
            DenoiserSpec::GaussianBlur { blur_sigma } => write!(f, "gaussian-b{blur_sigma:?}"),
            DenoiserSpec::Oracle => f.write_str("oracle"),
        }
    }
}

impl FromStr for DenoiserSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unrecognised denoiser id {s:?}"));
        let spec = if s == "oracle" {
            DenoiserSpec::Oracle
        } else if let Some(rest) = s.strip_prefix("mihcak-db8-l") {
            let (levels, sigma0) = rest.split_once("-s").ok_or_else(bad)?;
            DenoiserSpec::WaveletMihcak {
                levels: levels.parse().map_err(|_| bad())?,
                sigma0: sigma0.parse().map_err(|_| bad())?,
            }
        } else if let Some(b) = s.strip_prefix("gaussian-b") {
            DenoiserSpec::GaussianBlur {
                blur_sigma: b.parse().map_err(|_| bad())?,
            }
        } else {
            return Err(bad());
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Estimates the noise-free image. `truth` is required (and only used) by
/// the oracle denoiser.
pub fn denoise(y: &ImageMatrix, spec: &DenoiserSpec, truth: Option<&ImageMatrix>) -> Result<ImageMatrix> {
    spec.validate()?;
    match *spec {
        DenoiserSpec::WaveletMihcak { sigma0, levels } => {
            let limit = max_levels(y.rows(), y.cols());
            if levels > limit {
                return Err(Error::invalid(format!(
                    "{levels} wavelet levels exceed log2(min dim) = {limit} for {}x{}",
                    y.rows(),
                    y.cols()
                )));
            }
            wavelet_denoise(y, sigma0, levels)
        }
        DenoiserSpec::GaussianBlur { blur_sigma } => Ok(gaussian_blur(y, blur_sigma)),
        DenoiserSpec::Oracle => {
            let t = truth.ok_or_else(|| Error::invalid("oracle denoiser needs the true scene"))?;
            y.ensure_shape(t)?;
            Ok(t.clone())
        }
    }
}

pub fn residual(y: &ImageMatrix, denoised: &ImageMatrix) -> Result<ImageMatrix> {
    y.sub(denoised)
}

/// Wiener gain for one subband: `c σ̂² / (σ̂² + σ0²)` where `σ̂²` is the
/// smallest windowed signal-variance estimate.
pub fn shrink_subband(band: &ImageMatrix, sigma0: f64) -> ImageMatrix {
    let noise_var = sigma0 * sigma0;
    let energy = band.map(|c| c * c);
    let mut min_mean = box_mean(&energy, SHRINK_WINDOWS[0]);
    for &w in &SHRINK_WINDOWS[1..] {
        let m = box_mean(&energy, w);
        for (a, b) in min_mean.data_mut().iter_mut().zip(m.data()) {
            *a = a.min(*b);
        }
    }
    band.zip_map(&min_mean, |c, e| {
        let signal_var = (e - noise_var).max(0.0);
        if signal_var == 0.0 {
            0.0
        } else {
            c * signal_var / (signal_var + noise_var)
        }
    })
    .expect("same shape")
}

fn wavelet_denoise(y: &ImageMatrix, sigma0: f64, levels: usize) -> Result<ImageMatrix> {
    let block = 1usize << levels;
    let pad = |n: usize| {
        let total = (n + 2 * BOUNDARY_MARGIN).div_ceil(block) * block;
        (BOUNDARY_MARGIN, total)
    };
    let (top, prows) = pad(y.rows());
    let (left, pcols) = pad(y.cols());
    let padded = ImageMatrix::from_fn(prows, pcols, |r, c| {
        y[(
            reflect(r as isize - top as isize, y.rows()),
            reflect(c as isize - left as isize, y.cols()),
        )]
    });

    let mut pyramid = dwt2(&padded, levels)?;
    for level in &mut pyramid.details {
        for band in level.iter_mut() {
            *band = shrink_subband(band, sigma0);
        }
    }
    let restored = idwt2(&pyramid);
    Ok(ImageMatrix::from_fn(y.rows(), y.cols(), |r, c| restored[(r + top, c + left)]))
}
