// SPDX-License-Identifier: Apache-2.0

//! Sliding-window statistics with half-sample symmetric boundary extension
//! (`x[-1] = x[0]`, `x[n] = x[n-1]`).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::ImageMatrix;

/// Maps any integer index onto `0..n` by repeated mirroring.
#[inline]
pub fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period) as usize;
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

pub fn check_window(window: usize) -> Result<()> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::invalid(format!("window must be odd and >= 3, got {window}")));
    }
    Ok(())
}

/// Separable mean over a `window x window` neighbourhood. `window` must be odd
/// (1 is allowed and returns a copy).
pub fn box_mean(m: &ImageMatrix, window: usize) -> ImageMatrix {
    assert!(window % 2 == 1, "window must be odd");
    let (rows, cols) = m.shape();
    let half = (window / 2) as isize;
    let inv = 1.0 / window as f64;

    let mut horiz = vec![0.0; rows * cols];
    horiz
        .par_chunks_mut(cols)
        .zip(m.data().par_chunks(cols))
        .for_each(|(out, src)| {
            for (c, o) in out.iter_mut().enumerate() {
                let mut s = 0.0;
                for d in -half..=half {
                    s += src[reflect(c as isize + d, cols)];
                }
                *o = s * inv;
            }
        });

    let mut out = vec![0.0; rows * cols];
    out.par_chunks_mut(cols).enumerate().for_each(|(r, dst)| {
        for d in -half..=half {
            let rr = reflect(r as isize + d, rows);
            let src = &horiz[rr * cols..(rr + 1) * cols];
            for (o, &v) in dst.iter_mut().zip(src) {
                *o += v;
            }
        }
        for o in dst.iter_mut() {
            *o *= inv;
        }
    });
    ImageMatrix::from_vec_unchecked(rows, cols, out)
}

/// Local (population) variance over a `window x window` neighbourhood,
/// clamped at zero.
pub fn local_variance(m: &ImageMatrix, window: usize) -> ImageMatrix {
    // Shifting by a data value keeps constant inputs exactly zero.
    let shift = m.data()[0];
    let centered = m.map(|v| v - shift);
    let m1 = box_mean(&centered, window);
    let m2 = box_mean(&centered.map(|v| v * v), window);
    m2.zip_map(&m1, |s2, s1| (s2 - s1 * s1).max(0.0))
        .expect("same shape")
}

pub fn local_std(m: &ImageMatrix, window: usize) -> ImageMatrix {
    local_variance(m, window).map(f64::sqrt)
}

/// Separable Gaussian blur with standard deviation `sigma` (kernel radius
/// `ceil(4 sigma)`), symmetric boundary. `sigma == 0` returns a copy.
pub fn gaussian_blur(m: &ImageMatrix, sigma: f64) -> ImageMatrix {
    assert!(sigma >= 0.0 && sigma.is_finite(), "blur sigma must be finite and >= 0");
    if sigma == 0.0 {
        return m.clone();
    }
    let radius = (4.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (rows, cols) = m.shape();
    let mut horiz = vec![0.0; rows * cols];
    horiz
        .par_chunks_mut(cols)
        .zip(m.data().par_chunks(cols))
        .for_each(|(out, src)| {
            for (c, o) in out.iter_mut().enumerate() {
                let mut s = 0.0;
                for (k, d) in kernel.iter().zip(-radius..=radius) {
                    s += k * src[reflect(c as isize + d, cols)];
                }
                *o = s;
            }
        });
    let mut out = vec![0.0; rows * cols];
    out.par_chunks_mut(cols).enumerate().for_each(|(r, dst)| {
        for (k, d) in kernel.iter().zip(-radius..=radius) {
            let rr = reflect(r as isize + d, rows);
            for (o, &v) in dst.iter_mut().zip(&horiz[rr * cols..(rr + 1) * cols]) {
                *o += k * v;
            }
        }
    });
    ImageMatrix::from_vec_unchecked(rows, cols, out)
}
