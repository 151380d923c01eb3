// SPDX-License-Identifier: Apache-2.0

//! C ABI over the `prnuleak` core.
//!
//! Every function returns a [`PrnuStatus`]; results come back through out
//! pointers. Matrices and bundles are opaque heap handles owned by the caller
//! and released with the matching `*_free`. On failure the thread-local
//! message from [`prnu_last_error_message`] describes what went wrong.

#![allow(clippy::missing_safety_doc, clippy::neg_cmp_op_on_partial_ord)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use prnuleak::dataset_io::{load_bundle, load_image, save_bundle, FingerprintBundle};
use prnuleak::denoise::{denoise, residual, DenoiserSpec};
use prnuleak::fingerprint::{estimate, postprocess_bundle, PostprocessConfig, ResidualPair, DEFAULT_EPSILON_R};
use prnuleak::leakage::{ilb_bits, solve_mu};
use prnuleak::membership::{ncc_statistic, np_statistic, NpConfig};
use prnuleak::{Error, ImageMatrix};

/// Result code of every exported function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrnuStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Io = 4,
    Decode = 5,
    Format = 6,
    Manifest = 7,
    Numerical = 8,
    /// The requested optional field is absent (e.g. a bundle without R).
    NotPresent = 9,
    /// A Rust panic was caught at the boundary; this is a bug.
    Internal = 10,
}

/// Opaque luminance or fingerprint matrix.
pub struct PrnuMatrix(ImageMatrix);

/// Opaque fingerprint bundle.
pub struct PrnuBundle(FingerprintBundle);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: PrnuStatus, msg: impl Into<String>) -> PrnuStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &Error) -> PrnuStatus {
    match e {
        Error::DimensionMismatch { .. } => PrnuStatus::DimensionMismatch,
        Error::InvalidArgument(_) => PrnuStatus::InvalidArgument,
        Error::Io { .. } => PrnuStatus::Io,
        Error::Decode(_) => PrnuStatus::Decode,
        Error::Format(_) => PrnuStatus::Format,
        Error::Manifest(_) => PrnuStatus::Manifest,
        Error::Numerical(_) => PrnuStatus::Numerical,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), PrnuStatus>) -> PrnuStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PrnuStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(PrnuStatus::Internal, "panic inside prnuleak"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, PrnuStatus>;
}

impl<T> OrStatus<T> for prnuleak::Result<T> {
    fn or_status(self) -> Result<T, PrnuStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, PrnuStatus> {
    p.as_ref().ok_or_else(|| fail(PrnuStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, PrnuStatus> {
    p.as_mut().ok_or_else(|| fail(PrnuStatus::NullPointer, format!("{what} is NULL")))
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, PrnuStatus> {
    if p.is_null() {
        return Err(fail(PrnuStatus::NullPointer, "path is NULL"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(PrnuStatus::InvalidArgument, "path is not valid UTF-8"))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], PrnuStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(PrnuStatus::NullPointer, format!("{what} is NULL")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn prnu_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static name of a status code, e.g. "PRNU_STATUS_IO".
#[no_mangle]
pub extern "C" fn prnu_status_name(status: PrnuStatus) -> *const c_char {
    let s: &'static CStr = match status {
        PrnuStatus::Ok => c"PRNU_STATUS_OK",
        PrnuStatus::NullPointer => c"PRNU_STATUS_NULL_POINTER",
        PrnuStatus::InvalidArgument => c"PRNU_STATUS_INVALID_ARGUMENT",
        PrnuStatus::DimensionMismatch => c"PRNU_STATUS_DIMENSION_MISMATCH",
        PrnuStatus::Io => c"PRNU_STATUS_IO",
        PrnuStatus::Decode => c"PRNU_STATUS_DECODE",
        PrnuStatus::Format => c"PRNU_STATUS_FORMAT",
        PrnuStatus::Manifest => c"PRNU_STATUS_MANIFEST",
        PrnuStatus::Numerical => c"PRNU_STATUS_NUMERICAL",
        PrnuStatus::NotPresent => c"PRNU_STATUS_NOT_PRESENT",
        PrnuStatus::Internal => c"PRNU_STATUS_INTERNAL",
    };
    s.as_ptr()
}

/// Copies `rows * cols` row-major values into a new matrix.
#[no_mangle]
pub unsafe extern "C" fn prnu_matrix_new(rows: usize, cols: usize, data: *const f64, out: *mut *mut PrnuMatrix) -> PrnuStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| fail(PrnuStatus::InvalidArgument, "rows * cols overflows"))?;
        let values = slice_arg(data, n, "data")?.to_vec();
        let m = ImageMatrix::new(rows, cols, values).or_status()?;
        *out = boxed(PrnuMatrix(m));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn prnu_matrix_free(m: *mut PrnuMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

#[no_mangle]
pub unsafe extern "C" fn prnu_matrix_dims(m: *const PrnuMatrix, rows: *mut usize, cols: *mut usize) -> PrnuStatus {
    guard(|| {
        let m = deref(m, "matrix")?;
        *out_ptr(rows, "rows")? = m.0.rows();
        *out_ptr(cols, "cols")? = m.0.cols();
        Ok(())
    })
}

/// Copies the row-major values into `buf`, which must hold `len` doubles
/// with `len == rows * cols`.
#[no_mangle]
pub unsafe extern "C" fn prnu_matrix_copy(m: *const PrnuMatrix, buf: *mut f64, len: usize) -> PrnuStatus {
    guard(|| {
        let m = deref(m, "matrix")?;
        if len != m.0.len() {
            return Err(fail(
                PrnuStatus::DimensionMismatch,
                format!("buffer holds {len} values, matrix has {}", m.0.len()),
            ));
        }
        if buf.is_null() {
            return Err(fail(PrnuStatus::NullPointer, "buf is NULL"));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(m.0.data());
        Ok(())
    })
}

/// Decodes an 8-bit grayscale or RGB image (PNG or PNM) to luminance.
#[no_mangle]
pub unsafe extern "C" fn prnu_load_image(path: *const c_char, out: *mut *mut PrnuMatrix) -> PrnuStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let m = load_image(path_arg(path)?).or_status()?;
        *out = boxed(PrnuMatrix(m));
        Ok(())
    })
}

/// Wavelet denoiser with the given noise std `sigma0` and decomposition depth.
#[no_mangle]
pub unsafe extern "C" fn prnu_denoise_wavelet(y: *const PrnuMatrix, sigma0: f64, levels: usize, out: *mut *mut PrnuMatrix) -> PrnuStatus {
    guard(|| {
        let y = deref(y, "y")?;
        let out = out_ptr(out, "out")?;
        let spec = DenoiserSpec::WaveletMihcak { sigma0, levels };
        spec.validate().or_status()?;
        *out = boxed(PrnuMatrix(denoise(&y.0, &spec, None).or_status()?));
        Ok(())
    })
}

/// `W = Y - X̂`.
#[no_mangle]
pub unsafe extern "C" fn prnu_residual(y: *const PrnuMatrix, denoised: *const PrnuMatrix, out: *mut *mut PrnuMatrix) -> PrnuStatus {
    guard(|| {
        let (y, d) = (deref(y, "y")?, deref(denoised, "denoised")?);
        let out = out_ptr(out, "out")?;
        *out = boxed(PrnuMatrix(residual(&y.0, &d.0).or_status()?));
        Ok(())
    })
}

/// Estimates a fingerprint from `count` captures with the default wavelet
/// denoiser and post-processing. R is kept when `keep_r` is nonzero.
#[no_mangle]
pub unsafe extern "C" fn prnu_estimate(images: *const *const PrnuMatrix, count: usize, keep_r: i32, out: *mut *mut PrnuBundle) -> PrnuStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ptrs = slice_arg(images, count, "images")?;
        if ptrs.is_empty() {
            return Err(fail(PrnuStatus::InvalidArgument, "no images"));
        }
        let spec = DenoiserSpec::default();
        let mut pool = Vec::with_capacity(ptrs.len());
        for &p in ptrs {
            let y = deref(p, "image")?;
            pool.push(ResidualPair::from_capture(&y.0, &spec, None).or_status()?);
        }
        let mut bundle = estimate(&pool, DEFAULT_EPSILON_R).or_status()?.bundle;
        bundle.denoiser_id = spec.id();
        postprocess_bundle(&mut bundle, &PostprocessConfig::default()).or_status()?;
        if keep_r == 0 {
            bundle.normalizer = None;
        }
        *out = boxed(PrnuBundle(bundle));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn prnu_bundle_load(path: *const c_char, out: *mut *mut PrnuBundle) -> PrnuStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let b = load_bundle(path_arg(path)?).or_status()?;
        *out = boxed(PrnuBundle(b));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn prnu_bundle_save(b: *const PrnuBundle, path: *const c_char) -> PrnuStatus {
    guard(|| {
        let b = deref(b, "bundle")?;
        save_bundle(&b.0, path_arg(path)?).or_status()
    })
}

#[no_mangle]
pub unsafe extern "C" fn prnu_bundle_free(b: *mut PrnuBundle) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// New matrix holding a copy of the fingerprint `K̂`.
#[no_mangle]
pub unsafe extern "C" fn prnu_bundle_fingerprint(b: *const PrnuBundle, out: *mut *mut PrnuMatrix) -> PrnuStatus {
    guard(|| {
        let b = deref(b, "bundle")?;
        *out_ptr(out, "out")? = boxed(PrnuMatrix(b.0.fingerprint.clone()));
        Ok(())
    })
}

/// New matrix holding a copy of R; `PRNU_STATUS_NOT_PRESENT` if not stored.
#[no_mangle]
pub unsafe extern "C" fn prnu_bundle_normalizer(b: *const PrnuBundle, out: *mut *mut PrnuMatrix) -> PrnuStatus {
    guard(|| {
        let b = deref(b, "bundle")?;
        let out = out_ptr(out, "out")?;
        let r = b
            .0
            .normalizer
            .as_ref()
            .ok_or_else(|| fail(PrnuStatus::NotPresent, "bundle has no normalizer"))?;
        *out = boxed(PrnuMatrix(r.clone()));
        Ok(())
    })
}

/// Image count and post-processing flag bits of a bundle.
#[no_mangle]
pub unsafe extern "C" fn prnu_bundle_info(b: *const PrnuBundle, image_count: *mut u32, flags: *mut u8) -> PrnuStatus {
    guard(|| {
        let b = deref(b, "bundle")?;
        *out_ptr(image_count, "image_count")? = b.0.image_count;
        *out_ptr(flags, "flags")? = b.0.flags.bits();
        Ok(())
    })
}

/// Normalized cross-correlation between a fingerprint and a query residual.
#[no_mangle]
pub unsafe extern "C" fn prnu_ncc(k: *const PrnuMatrix, w: *const PrnuMatrix, out: *mut f64) -> PrnuStatus {
    guard(|| {
        let (k, w) = (deref(k, "k")?, deref(w, "w")?);
        *out_ptr(out, "out")? = ncc_statistic(&k.0, &w.0).or_status()?;
        Ok(())
    })
}

/// Likelihood-ratio membership statistic; needs the normalizer `r`.
#[no_mangle]
pub unsafe extern "C" fn prnu_np(
    k: *const PrnuMatrix,
    w: *const PrnuMatrix,
    denoised: *const PrnuMatrix,
    r: *const PrnuMatrix,
    window: usize,
    out: *mut f64,
) -> PrnuStatus {
    guard(|| {
        let (k, w) = (deref(k, "k")?, deref(w, "w")?);
        let (x, r) = (deref(denoised, "denoised")?, deref(r, "r")?);
        let cfg = NpConfig {
            window,
            ..NpConfig::default()
        };
        *out_ptr(out, "out")? = np_statistic(&k.0, &w.0, &x.0, &r.0, &cfg).or_status()?;
        Ok(())
    })
}

/// Lagrange multiplier for per-channel variances `gammas` and budget `p`.
#[no_mangle]
pub unsafe extern "C" fn prnu_solve_mu(gammas: *const f64, count: usize, p: f64, rel_tol: f64, out: *mut f64) -> PrnuStatus {
    guard(|| {
        let g = slice_arg(gammas, count, "gammas")?;
        *out_ptr(out, "out")? = solve_mu(g, p, rel_tol).or_status()?;
        Ok(())
    })
}

/// Leakage bound in bits for variances `gammas` at multiplier `mu`.
#[no_mangle]
pub unsafe extern "C" fn prnu_ilb_bits(gammas: *const f64, count: usize, mu: f64, out: *mut f64) -> PrnuStatus {
    guard(|| {
        let g = slice_arg(gammas, count, "gammas")?;
        if !(mu > 0.0) {
            return Err(fail(PrnuStatus::InvalidArgument, "mu must be positive"));
        }
        *out_ptr(out, "out")? = ilb_bits(g, mu);
        Ok(())
    })
}
