#ifndef RELAXMCR_H
#define RELAXMCR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes; values 2 to 4 match the command-line exit codes.
 */
typedef enum RmcrStatus {
  RMCR_STATUS_OK = 0,
  /**
   * Unreadable file, malformed input or invalid argument.
   */
  RMCR_STATUS_INVALID_INPUT = 2,
  RMCR_STATUS_NUMERIC = 3,
  RMCR_STATUS_CONVERGENCE = 4,
  RMCR_STATUS_NULL_POINTER = 5,
  /**
   * An output buffer is shorter than required.
   */
  RMCR_STATUS_BUFFER_TOO_SMALL = 6,
  /**
   * A Rust panic was caught at the boundary.
   */
  RMCR_STATUS_PANIC = 7,
} RmcrStatus;

/**
 * Opaque handle to one image cube.
 */
typedef struct RmcrCube RmcrCube;

/**
 * Opaque handle to a finished decomposition.
 */
typedef struct RmcrDecomposition RmcrDecomposition;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the calling thread's last error message into `buf` (NUL
 * terminated, truncated to `len`). Returns the full message length in bytes
 * excluding the terminator.
 *
 * # Safety
 * `buf` must be NULL or point to `len` writable bytes.
 */
size_t rmcr_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rmcr_version(void);

/**
 * Non-negative least squares `min ||A x - b||, x >= 0`.
 *
 * `a` is `m x n` row-major, `b` has `m` entries, `x_out` receives `n`.
 * `residual_out` may be NULL.
 *
 * # Safety
 * Pointers must reference arrays of the stated sizes.
 */
enum RmcrStatus rmcr_nnls(const double *a,
                          size_t m,
                          size_t n,
                          const double *b,
                          double *x_out,
                          double *residual_out);

/**
 * Explained variance and lack of fit (both percent) from the data and
 * residual sums of squares.
 *
 * # Safety
 * `ev_out` and `lof_out` must be valid for writes.
 */
enum RmcrStatus rmcr_fit_diagnostics(double sum_sq_data,
                                     double sum_sq_residual,
                                     double *ev_out,
                                     double *lof_out);

/**
 * Regularized non-negative inverse Laplace transform of one decay.
 *
 * The grid has `n_grid` log-spaced points over `[t2_min_ms, t2_max_ms]`.
 * `relative_lambda > 0` fixes the weight (relative to the kernel norm);
 * otherwise the L-curve picks it. `t2_out` and `amplitudes_out` receive
 * `n_grid` values; `lambda_out` may be NULL.
 *
 * # Safety
 * Pointers must reference arrays of the stated sizes.
 */
enum RmcrStatus rmcr_ilt_solve(const double *signal,
                               const double *echo_times_ms,
                               size_t n_echoes,
                               double t2_min_ms,
                               double t2_max_ms,
                               size_t n_grid,
                               double relative_lambda,
                               double *t2_out,
                               double *amplitudes_out,
                               double *lambda_out);

/**
 * Reads a cube file. On success `*out` owns a handle.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be valid for writes.
 */
enum RmcrStatus rmcr_cube_read(const char *path, struct RmcrCube **out);

/**
 * Width, height and number of echoes (or components) of a cube.
 *
 * # Safety
 * `cube` must be a live handle; outputs must be valid for writes.
 */
enum RmcrStatus rmcr_cube_dims(const struct RmcrCube *cube,
                               size_t *width,
                               size_t *height,
                               size_t *depth);

/**
 * Copies the samples in file order (row, column, echo; echo fastest).
 *
 * # Safety
 * `cube` must be a live handle; `out` must hold `len` doubles.
 */
enum RmcrStatus rmcr_cube_data(const struct RmcrCube *cube, double *out, size_t len);

/**
 * # Safety
 * `cube` must be NULL or a handle not yet freed.
 */
void rmcr_cube_free(struct RmcrCube *cube);

/**
 * Writes a synthetic series into `out_dir`. `spec_json` may be NULL for the
 * default specification.
 *
 * # Safety
 * String arguments must be NUL-terminated (or NULL where allowed).
 */
enum RmcrStatus rmcr_phantom_write(const char *spec_json, const char *out_dir);

/**
 * Runs the configured pipeline (masking, initialization, ALS) and writes
 * its result directory. `threads` follows the command-line convention:
 * 1 is sequential, anything else uses the shared thread pool.
 *
 * # Safety
 * `config_path` must be NUL-terminated; `out` must be valid for writes.
 */
enum RmcrStatus rmcr_decompose(const char *config_path,
                               size_t threads,
                               struct RmcrDecomposition **out);

/**
 * Rows of `C_aug`, echoes and components.
 *
 * # Safety
 * `dec` must be a live handle; outputs must be valid for writes.
 */
enum RmcrStatus rmcr_decomposition_dims(const struct RmcrDecomposition *dec,
                                        size_t *n_rows,
                                        size_t *n_echoes,
                                        size_t *n_components);

/**
 * Spectra `S` (`n_echoes x k`) in row-major order.
 *
 * # Safety
 * `dec` must be a live handle; `out` must hold `len` doubles.
 */
enum RmcrStatus rmcr_decomposition_spectra(const struct RmcrDecomposition *dec,
                                           double *out,
                                           size_t len);

/**
 * Concentrations `C_aug` (`n_rows x k`) in row-major order.
 *
 * # Safety
 * `dec` must be a live handle; `out` must hold `len` doubles.
 */
enum RmcrStatus rmcr_decomposition_concentrations(const struct RmcrDecomposition *dec,
                                                  double *out,
                                                  size_t len);

/**
 * Explained variance, lack of fit (percent) and whether ALS converged.
 *
 * # Safety
 * `dec` must be a live handle; outputs must be valid for writes.
 */
enum RmcrStatus rmcr_decomposition_fit(const struct RmcrDecomposition *dec,
                                       double *ev_out,
                                       double *lof_out,
                                       bool *converged_out);

/**
 * # Safety
 * `dec` must be NULL or a handle not yet freed.
 */
void rmcr_decomposition_free(struct RmcrDecomposition *dec);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RELAXMCR_H */
