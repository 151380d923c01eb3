// SPDX-License-Identifier: Apache-2.0

//! Dense row-major `f64` matrix used for every pixel-domain quantity
//! (captures, denoised images, residuals, fingerprints, variance maps).

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ImageMatrix {
    /// Wraps row-major `data`. Fails on zero dimensions, a length mismatch or
    /// any non-finite value.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("zero-sized matrix {rows}x{cols}")));
        }
        let expected = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::invalid("matrix dimensions overflow"))?;
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "matrix {rows}x{cols} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite value at index {i}")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        assert!(rows > 0 && cols > 0, "zero-sized matrix");
        assert!(value.is_finite());
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "zero-sized matrix");
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from data the caller guarantees to be well formed.
    pub(crate) fn from_vec_unchecked(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn same_shape(&self, other: &ImageMatrix) -> bool {
        self.shape() == other.shape()
    }

    pub fn ensure_shape(&self, other: &ImageMatrix) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected_rows: self.rows,
                expected_cols: self.cols,
                rows: other.rows,
                cols: other.cols,
            })
        }
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> ImageMatrix {
        Self::from_vec_unchecked(self.rows, self.cols, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise combination; shapes must match.
    pub fn zip_map(&self, other: &ImageMatrix, mut f: impl FnMut(f64, f64) -> f64) -> Result<ImageMatrix> {
        self.ensure_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_vec_unchecked(self.rows, self.cols, data))
    }

    /// Hadamard product.
    pub fn hadamard(&self, other: &ImageMatrix) -> Result<ImageMatrix> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn sub(&self, other: &ImageMatrix) -> Result<ImageMatrix> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &ImageMatrix) -> Result<ImageMatrix> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn add_assign(&mut self, other: &ImageMatrix) -> Result<()> {
        self.ensure_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&self, k: f64) -> ImageMatrix {
        self.map(|v| v * k)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    /// Sample variance with `n - 1` in the denominator (0 for a single value).
    pub fn sample_variance(&self) -> f64 {
        let n = self.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean();
        self.data.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64
    }

    pub fn sample_std(&self) -> f64 {
        self.sample_variance().sqrt()
    }

    pub fn sum_of_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Frobenius inner product `tr(AᵀB)`.
    pub fn frobenius_dot(&self, other: &ImageMatrix) -> Result<f64> {
        self.ensure_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn max_abs_diff(&self, other: &ImageMatrix) -> Result<f64> {
        self.ensure_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Pearson correlation coefficient of the two pixel sets.
    pub fn correlation(&self, other: &ImageMatrix) -> Result<f64> {
        self.ensure_shape(other)?;
        let (ma, mb) = (self.mean(), other.mean());
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            let (da, db) = (a - ma, b - mb);
            sab += da * db;
            saa += da * da;
            sbb += db * db;
        }
        Ok(sab / (saa * sbb).sqrt())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

impl Index<(usize, usize)> for ImageMatrix {
    type Output = f64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of bounds");
        &self.data[r * self.cols + c]
    }
}

impl IndexMut<(usize, usize)> for ImageMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        assert!(r < self.rows && c < self.cols, "index ({r},{c}) out of bounds");
        &mut self.data[r * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_construction() {
        assert!(ImageMatrix::new(0, 3, vec![]).is_err());
        assert!(ImageMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(ImageMatrix::new(1, 2, vec![1.0, f64::NAN]).is_err());
        assert!(ImageMatrix::new(1, 2, vec![1.0, f64::INFINITY]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let m = ImageMatrix::new(2, 3, vec![0., 1., 2., 3., 4., 5.]).unwrap();
        assert_eq!(m[(1, 0)], 3.0);
        assert_eq!(m.row(1), &[3., 4., 5.]);
    }

    #[test]
    fn shape_checks_propagate() {
        let a = ImageMatrix::zeros(2, 2);
        let b = ImageMatrix::zeros(2, 3);
        assert!(matches!(a.hadamard(&b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn correlation_of_self_is_one() {
        let m = ImageMatrix::from_fn(4, 4, |r, c| (r * 7 + c * 3) as f64 % 5.0);
        assert!((m.correlation(&m).unwrap() - 1.0).abs() < 1e-12);
    }
}
