// SPDX-License-Identifier: Apache-2.0

//! PRNU fingerprint estimation, information-leakage lower bounds and
//! membership inference against fingerprint estimates.

// `!(x > 0.0)` is used deliberately so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset_io;
pub mod denoise;
pub mod error;
pub mod eval;
pub mod fingerprint;
pub mod leakage;
pub mod matrix;
pub mod membership;
pub mod rng;
pub mod sensor_sim;
pub mod window;

pub use error::{Error, Result};
pub use matrix::ImageMatrix;
