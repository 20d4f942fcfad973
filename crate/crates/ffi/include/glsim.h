#ifndef GLSIM_H
#define GLSIM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every function.
 */
typedef enum GlsimStatus {
  GLSIM_STATUS_OK = 0,
  GLSIM_STATUS_NULL_POINTER = 1,
  /**
   * An argument violates a precondition (including inadmissible noise).
   */
  GLSIM_STATUS_INVALID_PARAMETER = 2,
  /**
   * A step could not be completed even after the maximum number of halvings.
   */
  GLSIM_STATUS_STEP_REJECTED = 3,
  GLSIM_STATUS_ESTIMATION = 4,
  GLSIM_STATUS_IO = 5,
  /**
   * A Rust panic was caught at the boundary.
   */
  GLSIM_STATUS_PANIC = 6,
} GlsimStatus;

/**
 * One trajectory with its own random stream.
 */
typedef struct GlsimSimulator GlsimSimulator;

/**
 * Simulation parameters, mirroring the CLI settings of the same names.
 */
typedef struct GlsimConfig {
  /**
   * Number of Fourier modes `K`.
   */
  size_t modes;
  double dt;
  /**
   * Horizon `T`.
   */
  double horizon;
  double alpha;
  double beta;
  double delta;
  double p;
  size_t record_stride;
  uint64_t seed;
  double noise_scale;
} GlsimConfig;

/**
 * Norms of the current state.
 */
typedef struct GlsimNorms {
  /**
   * `|X|_H`
   */
  double h;
  /**
   * `|X|_{H_delta}`
   */
  double hdelta;
  /**
   * `|Y|_H`
   */
  double y;
  /**
   * `|Z|_V`
   */
  double zv;
} GlsimNorms;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last non-OK status on this thread; empty after success.
 * The pointer stays valid until the next call into this library on the same thread.
 */
const char *glsim_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *glsim_version(void);

/**
 * Writes the default configuration (K = 32, dt = 1e-3, T = 1, alpha = 1.8, beta = 0.8, ...).
 *
 * # Safety
 * `out` must be NULL or valid for writes.
 */
enum GlsimStatus glsim_config_default(struct GlsimConfig *out);

/**
 * `GLSIM_STATUS_OK` when `(alpha, beta)` is admissible, else `GLSIM_STATUS_INVALID_PARAMETER`
 * with the violated inequality in the error message.
 */
enum GlsimStatus glsim_check_admissible(double alpha, double beta);

/**
 * Creates a simulator at `X_0 = x0`. `x0_cos` and `x0_sin` hold `modes`
 * coefficients each; pass NULL for both to start at zero. The random stream
 * is `(config.seed, stream_index)`.
 *
 * # Safety
 * `config` and `out` must be valid; `x0_cos`/`x0_sin` must be NULL or point to `config.modes` doubles.
 */
enum GlsimStatus glsim_simulator_new(const struct GlsimConfig *config,
                                     const double *x0_cos,
                                     const double *x0_sin,
                                     uint64_t stream_index,
                                     struct GlsimSimulator **out);

/**
 * Releases a simulator. NULL is ignored.
 *
 * # Safety
 * `sim` must come from [`glsim_simulator_new`] and not be used afterwards.
 */
void glsim_simulator_free(struct GlsimSimulator *sim);

/**
 * Advances `n_steps` steps of size `dt`.
 *
 * # Safety
 * `sim` must be a live handle.
 */
enum GlsimStatus glsim_simulator_step(struct GlsimSimulator *sim, uint64_t n_steps);

/**
 * Current time.
 *
 * # Safety
 * `sim` must be a live handle and `out` valid for writes.
 */
enum GlsimStatus glsim_simulator_time(const struct GlsimSimulator *sim, double *out);

/**
 * Copies the coefficients of `X = Y + Z` into `cos_out` and `sin_out`,
 * each of length `len >= modes`.
 *
 * # Safety
 * `sim` must be a live handle; the output buffers must hold `len` doubles.
 */
enum GlsimStatus glsim_simulator_state(const struct GlsimSimulator *sim,
                                       double *cos_out,
                                       double *sin_out,
                                       size_t len);

/**
 * Norms of the current state.
 *
 * # Safety
 * `sim` must be a live handle and `out` valid for writes.
 */
enum GlsimStatus glsim_simulator_norms(const struct GlsimSimulator *sim, struct GlsimNorms *out);

/**
 * Draws `n` standard symmetric stable variables (characteristic function
 * `exp(-|t|^alpha)`) from stream `(seed, stream_index)`.
 *
 * # Safety
 * `out` must hold `n` doubles.
 */
enum GlsimStatus glsim_sample_stable(double alpha,
                                     uint64_t seed,
                                     uint64_t stream_index,
                                     size_t n,
                                     double *out);

/**
 * Solution of `g' = -g^2 + kc^2`, `g(0) = g0`, at time `t` in `[0, horizon]`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum GlsimStatus glsim_riccati_explicit(double g0,
                                        double kc,
                                        double horizon,
                                        double t,
                                        double *out);

/**
 * `kc (1 + 2 / (e^horizon - 1))`.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum GlsimStatus glsim_halfinterval_bound(double kc, double horizon, double *out);

/**
 * Fractional Sobolev norm `|A^sigma x|_H` of the field with the given coefficients.
 *
 * # Safety
 * `cos` and `sin` must each hold `modes` doubles; `out` must be valid for writes.
 */
enum GlsimStatus glsim_field_norm_sobolev(const double *cos,
                                          const double *sin,
                                          size_t modes,
                                          double sigma,
                                          double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GLSIM_H */
