/* SPDX-License-Identifier: Apache-2.0 */
/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef PRNULEAK_H
#define PRNULEAK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Result code of every exported function.
 */
typedef enum PrnuStatus {
  PRNU_STATUS_OK = 0,
  PRNU_STATUS_NULL_POINTER = 1,
  PRNU_STATUS_INVALID_ARGUMENT = 2,
  PRNU_STATUS_DIMENSION_MISMATCH = 3,
  PRNU_STATUS_IO = 4,
  PRNU_STATUS_DECODE = 5,
  PRNU_STATUS_FORMAT = 6,
  PRNU_STATUS_MANIFEST = 7,
  PRNU_STATUS_NUMERICAL = 8,
  /*
   The requested optional field is absent (e.g. a bundle without R).
   */
  PRNU_STATUS_NOT_PRESENT = 9,
  /*
   A Rust panic was caught at the boundary; this is a bug.
   */
  PRNU_STATUS_INTERNAL = 10,
} PrnuStatus;

/*
 Opaque fingerprint bundle.
 */
typedef struct PrnuBundle PrnuBundle;

/*
 Opaque luminance or fingerprint matrix.
 */
typedef struct PrnuMatrix PrnuMatrix;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Message of the last failed call on this thread, or NULL. The pointer stays
 valid until the next call into this library from the same thread.
 */
const char *prnu_last_error_message(void);

/*
 Static name of a status code, e.g. "PRNU_STATUS_IO".
 */
const char *prnu_status_name(enum PrnuStatus status);

/*
 Copies `rows * cols` row-major values into a new matrix.
 */
enum PrnuStatus prnu_matrix_new(size_t rows,
                                size_t cols,
                                const double *data,
                                struct PrnuMatrix **out);

void prnu_matrix_free(struct PrnuMatrix *m);

enum PrnuStatus prnu_matrix_dims(const struct PrnuMatrix *m, size_t *rows, size_t *cols);

/*
 Copies the row-major values into `buf`, which must hold `len` doubles
 with `len == rows * cols`.
 */
enum PrnuStatus prnu_matrix_copy(const struct PrnuMatrix *m, double *buf, size_t len);

/*
 Decodes an 8-bit grayscale or RGB image (PNG or PNM) to luminance.
 */
enum PrnuStatus prnu_load_image(const char *path, struct PrnuMatrix **out);

/*
 Wavelet denoiser with the given noise std `sigma0` and decomposition depth.
 */
enum PrnuStatus prnu_denoise_wavelet(const struct PrnuMatrix *y,
                                     double sigma0,
                                     size_t levels,
                                     struct PrnuMatrix **out);

/*
 `W = Y - X̂`.
 */
enum PrnuStatus prnu_residual(const struct PrnuMatrix *y,
                              const struct PrnuMatrix *denoised,
                              struct PrnuMatrix **out);

/*
 Estimates a fingerprint from `count` captures with the default wavelet
 denoiser and post-processing. R is kept when `keep_r` is nonzero.
 */
enum PrnuStatus prnu_estimate(const struct PrnuMatrix *const *images,
                              size_t count,
                              int32_t keep_r,
                              struct PrnuBundle **out);

enum PrnuStatus prnu_bundle_load(const char *path, struct PrnuBundle **out);

enum PrnuStatus prnu_bundle_save(const struct PrnuBundle *b, const char *path);

void prnu_bundle_free(struct PrnuBundle *b);

/*
 New matrix holding a copy of the fingerprint `K̂`.
 */
enum PrnuStatus prnu_bundle_fingerprint(const struct PrnuBundle *b, struct PrnuMatrix **out);

/*
 New matrix holding a copy of R; `PRNU_STATUS_NOT_PRESENT` if not stored.
 */
enum PrnuStatus prnu_bundle_normalizer(const struct PrnuBundle *b, struct PrnuMatrix **out);

/*
 Image count and post-processing flag bits of a bundle.
 */
enum PrnuStatus prnu_bundle_info(const struct PrnuBundle *b, uint32_t *image_count, uint8_t *flags);

/*
 Normalized cross-correlation between a fingerprint and a query residual.
 */
enum PrnuStatus prnu_ncc(const struct PrnuMatrix *k, const struct PrnuMatrix *w, double *out);

/*
 Likelihood-ratio membership statistic; needs the normalizer `r`.
 */
enum PrnuStatus prnu_np(const struct PrnuMatrix *k,
                        const struct PrnuMatrix *w,
                        const struct PrnuMatrix *denoised,
                        const struct PrnuMatrix *r,
                        size_t window,
                        double *out);

/*
 Lagrange multiplier for per-channel variances `gammas` and budget `p`.
 */
enum PrnuStatus prnu_solve_mu(const double *gammas,
                              size_t count,
                              double p,
                              double rel_tol,
                              double *out);

/*
 Leakage bound in bits for variances `gammas` at multiplier `mu`.
 */
enum PrnuStatus prnu_ilb_bits(const double *gammas, size_t count, double mu, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PRNULEAK_H */
