#ifndef NOISEDESIGN_H
#define NOISEDESIGN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NdStatus {
  ND_OK = 0,
  /**
   * A required pointer argument was null.
   */
  ND_ERR_NULL = 1,
  /**
   * Bad argument value, shape or file contents.
   */
  ND_ERR_INVALID = 2,
  ND_ERR_NON_FINITE = 3,
  /**
   * Linear or nonlinear solve failed.
   */
  ND_ERR_SOLVER = 4,
  ND_ERR_CONFIG = 5,
  ND_ERR_IO = 6,
  /**
   * Output buffer too short; nothing was written.
   */
  ND_ERR_BUFFER = 7,
  /**
   * Rust panic caught at the boundary.
   */
  ND_ERR_PANIC = 8,
} NdStatus;

/**
 * η = 0 DDIM map from a noise input to a sample.
 */
typedef struct NdGenerator NdGenerator;

/**
 * Periodic unit cell on an `nx × ny` grid.
 */
typedef struct NdHomogenizer NdHomogenizer;

/**
 * Trained denoiser weights and architecture.
 */
typedef struct NdModel NdModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *nd_version(void);

/**
 * Copies the calling thread's last error message into `buf` (always
 * NUL-terminated when `cap > 0`, truncated to fit). Returns the full
 * message length without the terminator.
 *
 * # Safety
 * `buf` must be null or point to `cap` writable bytes.
 */
size_t nd_last_error(char *buf, size_t cap);

/**
 * Loads a checkpoint written by the `train` command.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum NdStatus nd_model_load(const char *path, struct NdModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`nd_model_load`] not yet freed.
 */
void nd_model_free(struct NdModel *model);

/**
 * Number of values in one sample (`channels × side²` or the data dimension).
 *
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
enum NdStatus nd_model_sample_len(const struct NdModel *model, size_t *out);

/**
 * Deterministic sampler with `steps` uniformly spaced DDIM steps over a
 * linear schedule of `t_max` steps from `beta_start` to `beta_end`.
 *
 * # Safety
 * `model` must be a live handle; `out` writable.
 */
enum NdStatus nd_generator_new(const struct NdModel *model,
                               size_t t_max,
                               double beta_start,
                               double beta_end,
                               size_t steps,
                               struct NdGenerator **out);

/**
 * # Safety
 * `g` must be null or a handle from [`nd_generator_new`] not yet freed.
 */
void nd_generator_free(struct NdGenerator *g);

/**
 * Length of the noise input, equal to the sample length.
 *
 * # Safety
 * `g` must be a live handle; `out` writable.
 */
enum NdStatus nd_generator_dim(const struct NdGenerator *g, size_t *out);

/**
 * Maps the noise input `w` (`w_len` values) to a sample written to `out`.
 *
 * # Safety
 * `w` must point to `w_len` readable doubles and `out` to `out_cap`
 * writable doubles.
 */
enum NdStatus nd_generator_generate(const struct NdGenerator *g,
                                    const double *w,
                                    size_t w_len,
                                    double *out,
                                    size_t out_cap);

/**
 * Unit cell with `nx × ny` square elements and Poisson ratio `nu`
 * (`plane_strain` nonzero selects plane strain).
 *
 * # Safety
 * `out` must be writable.
 */
enum NdStatus nd_homogenizer_new(size_t nx,
                                 size_t ny,
                                 double nu,
                                 int32_t plane_strain,
                                 struct NdHomogenizer **out);

/**
 * # Safety
 * `h` must be null or a handle from [`nd_homogenizer_new`] not yet freed.
 */
void nd_homogenizer_free(struct NdHomogenizer *h);

/**
 * Effective 3×3 Voigt stiffness, row-major into `c_out[9]`, for per-element
 * Young's moduli `theta` in element order (row `j` of elements is `y = j`).
 *
 * # Safety
 * `theta` must point to `n` readable doubles, `c_out` to 9 writable doubles.
 */
enum NdStatus nd_homogenize(const struct NdHomogenizer *h,
                            const double *theta,
                            size_t n,
                            double *c_out);

/**
 * `out[i] = ½(tanh(γ x[i]) + 1)`. `out` may alias `x`.
 *
 * # Safety
 * `x` and `out` must each point to `n` doubles.
 */
enum NdStatus nd_project(const double *x, size_t n, double gamma, double *out);

/**
 * Fraction of the `n` densities within `tau` of 0 or 1.
 *
 * # Safety
 * `rho` must point to `n` readable doubles; `out` writable.
 */
enum NdStatus nd_binarization(const double *rho, size_t n, double tau, double *out);

/**
 * Runs the command named in a TOML experiment config, writing the run
 * directory to `out_dir`. Same artifacts as the command-line binary.
 *
 * # Safety
 * Both arguments must be NUL-terminated strings.
 */
enum NdStatus nd_run_config(const char *config_toml, const char *out_dir);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NOISEDESIGN_H */
