// SPDX-License-Identifier: Apache-2.0

//! Maximum-likelihood PRNU estimate `K̂ = Σ W∘X̂ / Σ X̂∘X̂` and its
//! post-processing.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dataset_io::{load_image, DatasetManifest, FingerprintBundle, ManifestEntry, PostprocessFlags};
use crate::denoise::{denoise, residual, DenoiserSpec};
use crate::error::{Error, Result};
use crate::matrix::ImageMatrix;
use crate::window::{check_window, local_std};

pub const DEFAULT_EPSILON_R: f64 = 1e-6;
pub const DEFAULT_WIENER_WINDOW: usize = 5;
pub const DEFAULT_WHITEN_WINDOW: usize = 5;
/// Images per partial accumulator; fixed so the reduction tree never depends
/// on the thread count.
const REDUCTION_CHUNK: usize = 8;

/// Residual and denoised image of one capture.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualPair {
    pub residual: ImageMatrix,
    pub denoised: ImageMatrix,
}

impl ResidualPair {
    pub fn new(residual: ImageMatrix, denoised: ImageMatrix) -> Result<Self> {
        residual.ensure_shape(&denoised)?;
        Ok(Self { residual, denoised })
    }

    pub fn from_capture(y: &ImageMatrix, spec: &DenoiserSpec, truth: Option<&ImageMatrix>) -> Result<Self> {
        let denoised = denoise(y, spec, truth)?;
        let residual = residual(y, &denoised)?;
        Ok(Self { residual, denoised })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.residual.shape()
    }
}

/// Loads and denoises manifest entries in parallel; output order follows `entries`.
/// Fails on the first unreadable image or on mixed dimensions.
pub fn load_residual_pool(manifest: &DatasetManifest, entries: &[&ManifestEntry], spec: &DenoiserSpec) -> Result<Vec<ResidualPair>> {
    let pool: Vec<ResidualPair> = entries
        .par_iter()
        .map(|e| ResidualPair::from_capture(&load_image(manifest.resolve(e))?, spec, None))
        .collect::<Result<_>>()?;
    if let Some(first) = pool.first() {
        for pair in &pool[1..] {
            first.residual.ensure_shape(&pair.residual)?;
        }
    }
    Ok(pool)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationAccumulator {
    numerator: ImageMatrix,
    normalizer: ImageMatrix,
    count: usize,
}

impl EstimationAccumulator {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            numerator: ImageMatrix::zeros(rows, cols),
            normalizer: ImageMatrix::zeros(rows, cols),
            count: 0,
        }
    }

    /// `numerator += W∘X̂`, `R += X̂∘X̂`.
    pub fn accumulate(&mut self, w: &ImageMatrix, denoised: &ImageMatrix) -> Result<()> {
        self.numerator.ensure_shape(w)?;
        self.numerator.ensure_shape(denoised)?;
        let num = self.numerator.data_mut();
        for ((n, &wv), &xv) in num.iter_mut().zip(w.data()).zip(denoised.data()) {
            *n += wv * xv;
        }
        for (r, &xv) in self.normalizer.data_mut().iter_mut().zip(denoised.data()) {
            *r += xv * xv;
        }
        self.count += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &EstimationAccumulator) -> Result<()> {
        self.numerator.add_assign(&other.numerator)?;
        self.normalizer.add_assign(&other.normalizer)?;
        self.count += other.count;
        Ok(())
    }

    pub fn numerator(&self) -> &ImageMatrix {
        &self.numerator
    }

    pub fn normalizer(&self) -> &ImageMatrix {
        &self.normalizer
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Pointwise division by `max(R, epsilon_r)`.
    pub fn finalize(&self, epsilon_r: f64) -> Result<Finalized> {
        if self.count == 0 {
            return Err(Error::invalid("no images accumulated"));
        }
        if !(epsilon_r > 0.0) {
            return Err(Error::invalid(format!("epsilon_r must be positive, got {epsilon_r}")));
        }
        if self.normalizer.data().iter().all(|&r| r == 0.0) {
            return Err(Error::Numerical(
                "normalizer R is zero everywhere (all denoised images are black)".into(),
            ));
        }
        let mut guarded_pixels = 0;
        let fingerprint = self
            .numerator
            .zip_map(&self.normalizer, |n, r| {
                if r < epsilon_r {
                    guarded_pixels += 1;
                }
                n / r.max(epsilon_r)
            })?;
        // Guarded pixels are lifted to epsilon_r so the stored R stays positive.
        let normalizer = self.normalizer.map(|r| r.max(epsilon_r));
        let image_count =
            u32::try_from(self.count).map_err(|_| Error::invalid("more than u32::MAX images"))?;
        Ok(Finalized {
            bundle: FingerprintBundle {
                fingerprint,
                normalizer: Some(normalizer),
                image_count,
                flags: PostprocessFlags::empty(),
                denoiser_id: String::new(),
                seed: None,
            },
            guarded_pixels,
        })
    }
}

/// Result of [`EstimationAccumulator::finalize`].
#[derive(Clone, Debug, PartialEq)]
pub struct Finalized {
    pub bundle: FingerprintBundle,
    /// Pixels where `R < epsilon_r` and the guard was applied.
    pub guarded_pixels: usize,
}

/// Accumulates the pool members listed in `indices`. The indices are sorted
/// first, so any permutation of the same set gives a bit-identical result.
pub fn accumulate_subset(pool: &[ResidualPair], indices: &[usize]) -> Result<EstimationAccumulator> {
    let first = indices
        .first()
        .ok_or_else(|| Error::invalid("empty estimation set"))?;
    let (rows, cols) = pool
        .get(*first)
        .ok_or_else(|| Error::invalid("index out of range"))?
        .shape();
    let mut sorted = indices.to_vec();
    sorted.sort_unstable();
    if let Some(&bad) = sorted.iter().find(|&&i| i >= pool.len()) {
        return Err(Error::invalid(format!("index {bad} out of range for pool of {}", pool.len())));
    }

    let partials: Vec<Result<EstimationAccumulator>> = sorted
        .par_chunks(REDUCTION_CHUNK)
        .map(|chunk| {
            let mut acc = EstimationAccumulator::new(rows, cols);
            for &i in chunk {
                acc.accumulate(&pool[i].residual, &pool[i].denoised)?;
            }
            Ok(acc)
        })
        .collect();
    let mut total = EstimationAccumulator::new(rows, cols);
    for p in partials {
        total.merge(&p?)?;
    }
    Ok(total)
}

/// Estimates from the whole slice (in slice order).
pub fn estimate(pool: &[ResidualPair], epsilon_r: f64) -> Result<Finalized> {
    let all: Vec<usize> = (0..pool.len()).collect();
    accumulate_subset(pool, &all)?.finalize(epsilon_r)
}

/// Subtracts row means, then column means of the result.
pub fn zero_mean(k: &ImageMatrix) -> ImageMatrix {
    let (rows, cols) = k.shape();
    let mut out = k.clone();
    let data = out.data_mut();
    for row in data.chunks_mut(cols) {
        let m = row.iter().sum::<f64>() / cols as f64;
        row.iter_mut().for_each(|v| *v -= m);
    }
    let mut col_means = vec![0.0; cols];
    for row in data.chunks(cols) {
        for (s, v) in col_means.iter_mut().zip(row) {
            *s += v;
        }
    }
    col_means.iter_mut().for_each(|s| *s /= rows as f64);
    for row in data.chunks_mut(cols) {
        for (v, m) in row.iter_mut().zip(&col_means) {
            *v -= m;
        }
    }
    out
}

fn fft2(data: &mut [Complex64], rows: usize, cols: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(cols), planner.plan_fft_inverse(rows))
    } else {
        (planner.plan_fft_forward(cols), planner.plan_fft_forward(rows))
    };
    for row in data.chunks_mut(cols) {
        row_fft.process(row);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = data[r * cols + c];
        }
        col_fft.process(&mut column);
        for r in 0..rows {
            data[r * cols + c] = column[r];
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len();
    let mid = n / 2;
    let (lower, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *upper;
    if n % 2 == 1 {
        hi
    } else {
        let lo = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Mean over a `window x window` neighbourhood with periodic wrap.
fn periodic_box_mean(p: &[f64], rows: usize, cols: usize, window: usize) -> Vec<f64> {
    let half = (window / 2) as isize;
    let mut horiz = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut s = 0.0;
            for d in -half..=half {
                s += p[r * cols + (c as isize + d).rem_euclid(cols as isize) as usize];
            }
            horiz[r * cols + c] = s;
        }
    }
    let norm = 1.0 / (window * window) as f64;
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for d in -half..=half {
            let rr = (r as isize + d).rem_euclid(rows as isize) as usize;
            for c in 0..cols {
                out[r * cols + c] += horiz[rr * cols + c];
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= norm);
    out
}

/// Suppresses periodic (non-unique) components in the full 2-D DFT.
///
/// The noise floor is `σ_f² = median(|F|²) / ln 2` over non-DC bins, i.e. the
/// mean power of a white spectrum. Each bin keeps the noise-like part of its
/// locally averaged power `A`: gain `1 - max(0, A - σ_f²)/A = min(1, σ_f²/A)`.
/// Broadband bins pass almost untouched while spectral peaks are pulled down
/// to the floor. The DC bin is left as is.
pub fn dft_wiener(k: &ImageMatrix, window: usize) -> Result<ImageMatrix> {
    check_window(window)?;
    let (rows, cols) = k.shape();
    let n = rows * cols;
    let mut spec: Vec<Complex64> = k.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut spec, rows, cols, false);

    let power: Vec<f64> = spec.iter().map(|z| z.norm_sqr()).collect();
    let mut non_dc: Vec<f64> = power[1..].to_vec();
    let floor = median(&mut non_dc) / std::f64::consts::LN_2;
    let local = periodic_box_mean(&power, rows, cols, window);

    for (i, z) in spec.iter_mut().enumerate().skip(1) {
        let a = local[i];
        let gain = if a > floor { floor / a } else { 1.0 };
        *z *= gain;
    }
    fft2(&mut spec, rows, cols, true);
    let inv_n = 1.0 / n as f64;
    let data = spec.iter().map(|z| z.re * inv_n).collect();
    ImageMatrix::new(rows, cols, data)
}

/// Divides by the local standard deviation. Pixels whose local std is at or
/// below `1e-12` times the global RMS carry no usable signal and are set to 0.
pub fn whiten(k: &ImageMatrix, window: usize) -> Result<ImageMatrix> {
    k.hadamard(&whitening_gain(k, window)?)
}

/// Per-pixel multiplier applied by [`whiten`]: `1 / localstd`, or 0 where guarded.
pub fn whitening_gain(k: &ImageMatrix, window: usize) -> Result<ImageMatrix> {
    check_window(window)?;
    let rms = (k.sum_of_squares() / k.len() as f64).sqrt();
    let guard = 1e-12 * rms;
    Ok(local_std(k, window).map(|sd| if sd <= guard { 0.0 } else { 1.0 / sd }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct PostprocessConfig {
    pub zero_mean: bool,
    pub dft_wiener: bool,
    pub wiener_window: usize,
    pub whiten: bool,
    pub whiten_window: usize,
}

impl Default for PostprocessConfig {
    fn default() -> Self {
        Self {
            zero_mean: true,
            dft_wiener: true,
            wiener_window: DEFAULT_WIENER_WINDOW,
            whiten: false,
            whiten_window: DEFAULT_WHITEN_WINDOW,
        }
    }
}

impl PostprocessConfig {
    pub fn raw() -> Self {
        Self {
            zero_mean: false,
            dft_wiener: false,
            whiten: false,
            ..Self::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        !(self.zero_mean || self.dft_wiener || self.whiten)
    }
}

/// Runs zero-mean, DFT Wiener and whitening (in that order, each when
/// enabled) and returns the processed map with the matching flags.
pub fn postprocess(k: &ImageMatrix, cfg: &PostprocessConfig) -> Result<(ImageMatrix, PostprocessFlags)> {
    let mut out = k.clone();
    let mut flags = PostprocessFlags::empty();
    if cfg.zero_mean {
        out = zero_mean(&out);
        flags.insert(PostprocessFlags::ZERO_MEANED);
    }
    if cfg.dft_wiener {
        out = dft_wiener(&out, cfg.wiener_window)?;
        flags.insert(PostprocessFlags::DFT_WIENER);
        if cfg.zero_mean {
            // Filtering is linear and keeps the zero row/column spectra, but
            // re-centering removes the rounding residue.
            out = zero_mean(&out);
        }
    }
    if cfg.whiten {
        out = whiten(&out, cfg.whiten_window)?;
        flags.insert(PostprocessFlags::WHITENED);
    }
    Ok((out, flags))
}

/// Applies [`postprocess`] to a bundle's fingerprint, merging flags.
pub fn postprocess_bundle(bundle: &mut FingerprintBundle, cfg: &PostprocessConfig) -> Result<()> {
    let (k, flags) = postprocess(&bundle.fingerprint, cfg)?;
    bundle.fingerprint = k;
    bundle.flags.insert(flags);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset_io::max_abs_row_col_mean;
    use crate::sensor_sim::{capture, flat_field, gen_prnu, textured_field, CaptureConfig};
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, std: f64, seed: u64) -> ImageMatrix {
        let mut rng = crate::rng::stream_rng(seed, crate::rng::Stream::Noise);
        ImageMatrix::from_fn(rows, cols, |_, _| std * rng.sample::<f64, _>(StandardNormal))
    }

    fn row_col_means(m: &ImageMatrix) -> f64 {
        max_abs_row_col_mean(m)
    }

    #[test]
    fn accumulate_direct_product() {
        let mut acc = EstimationAccumulator::new(3, 3);
        acc.accumulate(&ImageMatrix::filled(3, 3, 1.0), &ImageMatrix::filled(3, 3, 10.0))
            .unwrap();
        assert!(acc.numerator().data().iter().all(|&v| v == 10.0));
        assert!(acc.normalizer().data().iter().all(|&v| v == 100.0));
        assert_eq!(acc.count(), 1);
        assert!(acc.accumulate(&ImageMatrix::zeros(2, 3), &ImageMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn permuted_order_is_bit_identical() {
        let pool: Vec<ResidualPair> = (0..19)
            .map(|i| {
                ResidualPair::new(gaussian(8, 8, 1.0, i), gaussian(8, 8, 30.0, 100 + i).map(|v| v + 100.0))
                    .unwrap()
            })
            .collect();
        let forward: Vec<usize> = (0..19).collect();
        let mut shuffled = forward.clone();
        shuffled.reverse();
        shuffled.swap(3, 11);
        let a = accumulate_subset(&pool, &forward).unwrap().finalize(1e-6).unwrap();
        let b = accumulate_subset(&pool, &shuffled).unwrap().finalize(1e-6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn all_zero_images_fail_at_finalize() {
        let mut acc = EstimationAccumulator::new(4, 4);
        for _ in 0..3 {
            acc.accumulate(&ImageMatrix::zeros(4, 4), &ImageMatrix::zeros(4, 4)).unwrap();
        }
        assert!(matches!(acc.finalize(1e-6), Err(Error::Numerical(_))));
        assert!(EstimationAccumulator::new(2, 2).finalize(1e-6).is_err());
    }

    #[test]
    fn guard_is_counted_and_r_stays_positive() {
        let mut acc = EstimationAccumulator::new(1, 2);
        acc.accumulate(
            &ImageMatrix::new(1, 2, vec![1.0, 1e-9]).unwrap(),
            &ImageMatrix::new(1, 2, vec![2.0, 1e-4]).unwrap(),
        )
        .unwrap();
        let f = acc.finalize(1e-6).unwrap();
        assert_eq!(f.guarded_pixels, 1);
        assert_eq!(f.bundle.fingerprint[(0, 0)], 0.5);
        assert_eq!(f.bundle.fingerprint[(0, 1)], (1e-9 * 1e-4) / 1e-6);
        assert!(f.bundle.validate().is_ok());
    }

    #[test]
    fn oracle_single_capture_recovers_k_exactly() {
        let x = textured_field(16, 16, 3, 1.0).unwrap().map(|v| v + 10.0);
        let s = gen_prnu(16, 16, 0.02, 1).unwrap();
        let y = capture(&x, &s, &CaptureConfig::new(0.0, 0)).unwrap();
        let pair = ResidualPair::from_capture(&y, &DenoiserSpec::Oracle, Some(&x)).unwrap();
        let f = estimate(&[pair], DEFAULT_EPSILON_R).unwrap();
        assert!(f.bundle.fingerprint.max_abs_diff(&s.k).unwrap() < 1e-15);
    }

    #[test]
    fn duplicated_image_gives_same_estimate() {
        let x = flat_field(8, 8, 50.0).unwrap();
        let s = gen_prnu(8, 8, 0.02, 2).unwrap();
        let y = capture(&x, &s, &CaptureConfig::new(1.0, 4)).unwrap();
        let pair = ResidualPair::from_capture(&y, &DenoiserSpec::GaussianBlur { blur_sigma: 1.0 }, None).unwrap();
        let one = estimate(std::slice::from_ref(&pair), 1e-6).unwrap();
        let two = estimate(&[pair.clone(), pair], 1e-6).unwrap();
        assert!(one.bundle.fingerprint.max_abs_diff(&two.bundle.fingerprint).unwrap() < 1e-15);
    }

    #[test]
    fn zero_mean_properties() {
        let k = gaussian(13, 17, 1.0, 5).map(|v| v + 3.0);
        let z = zero_mean(&k);
        assert!(row_col_means(&z) < 1e-9);
        assert!(zero_mean(&z).max_abs_diff(&z).unwrap() < 1e-12);
        assert!(zero_mean(&ImageMatrix::filled(4, 5, 2.5)).data().iter().all(|v| v.abs() < 1e-15));
        // additive row/column offsets vanish completely
        let offsets = ImageMatrix::from_fn(6, 7, |r, c| (r as f64 * 1.7 - 2.0) + (c as f64 * -0.3 + 0.9));
        assert!(zero_mean(&offsets).data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn dft_wiener_basic_properties() {
        let zero = ImageMatrix::zeros(16, 16);
        assert_eq!(dft_wiener(&zero, 5).unwrap(), zero);
        let noise = zero_mean(&gaussian(64, 64, 1.0, 9));
        let out = dft_wiener(&noise, 5).unwrap();
        assert!(out.sum_of_squares() <= noise.sum_of_squares());
        assert!(dft_wiener(&noise, 4).is_err());
    }

    #[test]
    fn dft_wiener_removes_periodic_pattern() {
        let (m, n) = (128, 128);
        let noise = gaussian(m, n, 0.01, 21);
        let tone = ImageMatrix::from_fn(m, n, |r, c| {
            0.02 * (2.0 * std::f64::consts::PI * (8.0 * r as f64 / m as f64 + 20.0 * c as f64 / n as f64)).cos()
        });
        let input = tone.add(&noise).unwrap();
        let out = dft_wiener(&input, 5).unwrap();
        // the filter is linear given its gains, so project on the tone
        let tone_energy = |m: &ImageMatrix| {
            let a = m.frobenius_dot(&tone).unwrap() / tone.sum_of_squares();
            a * a * tone.sum_of_squares()
        };
        let before = tone_energy(&input);
        let after = tone_energy(&out);
        assert!(after * 10.0 <= before, "tone {before} -> {after}");
        let broadband_out = out.sub(&tone.scale(out.frobenius_dot(&tone).unwrap() / tone.sum_of_squares()))
            .unwrap()
            .sum_of_squares();
        assert!(broadband_out * 2.0 > noise.sum_of_squares());
    }

    #[test]
    fn whiten_properties() {
        let k = gaussian(128, 128, 0.3, 33);
        let w = whiten(&k, 5).unwrap();
        let s = local_std(&w, 5);
        let mut vals = s.data().to_vec();
        vals.sort_by(f64::total_cmp);
        let med = vals[vals.len() / 2];
        assert!((0.7..=1.3).contains(&med), "median local std {med}");

        let scaled = whiten(&k.scale(10.0), 5).unwrap();
        assert!(scaled.max_abs_diff(&w).unwrap() < 1e-12);

        let c = whiten(&ImageMatrix::filled(9, 9, 0.4), 5).unwrap();
        assert!(c.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn postprocess_sets_flags() {
        let k = gaussian(32, 32, 0.01, 3);
        let (out, flags) = postprocess(&k, &PostprocessConfig::default()).unwrap();
        assert!(flags.contains(PostprocessFlags::ZERO_MEANED));
        assert!(flags.contains(PostprocessFlags::DFT_WIENER));
        assert!(!flags.contains(PostprocessFlags::WHITENED));
        assert!(row_col_means(&out) < 1e-9);
        let (same, none) = postprocess(&k, &PostprocessConfig::raw()).unwrap();
        assert_eq!(same, k);
        assert_eq!(none, PostprocessFlags::empty());
    }
}
