#ifndef RQ_SPICE_H
#define RQ_SPICE_H

/* Generated with cbindgen:0.29.4 */

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum RqStatus {
  RQ_STATUS_OK = 0,
  RQ_STATUS_NULL_POINTER = 1,
  RQ_STATUS_INVALID_ARGUMENT = 2,
  RQ_STATUS_DIMENSION = 3,
  RQ_STATUS_NUMERICAL = 4,
  RQ_STATUS_BUFFER_TOO_SMALL = 5,
  RQ_STATUS_PANIC = 6,
} RqStatus;

typedef enum RqNoiseMode {
  RQ_NOISE_MODE_UNIFORM = 0,
  RQ_NOISE_MODE_HETEROSCEDASTIC = 1,
} RqNoiseMode;

/**
 * Solver settings.
 */
typedef struct RqConfig RqConfig;

/**
 * A dictionary of atoms, optionally carrying a frequency grid.
 */
typedef struct RqDictionary RqDictionary;

/**
 * Result of a solve.
 */
typedef struct RqSolution RqSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static nul-terminated string.
 */
const char *rq_version(void);

/**
 * Length in bytes, without the terminator, of the last error message on this thread (0 if none).
 */
size_t rq_last_error_length(void);

/**
 * Copies the last error message into `buf` (nul-terminated, truncated to `len - 1` bytes).
 * Returns the number of bytes written, excluding the terminator.
 *
 * # Safety
 * `buf` must be valid for writes of `len` bytes.
 */
size_t rq_last_error_message(char *buf, size_t len);

/**
 * Builds the uniform sinusoid dictionary with atoms at frequencies `k / n_grid`, `k = 1..=n_grid`.
 *
 * # Safety
 * `out` must be a valid pointer to write the handle to.
 */
enum RqStatus rq_dictionary_sinusoid(size_t n_samples, size_t n_grid, struct RqDictionary **out);

/**
 * Copies an `n_samples x n_atoms` column-major complex matrix into a new dictionary.
 *
 * # Safety
 * `data` must hold `2 * n_samples * n_atoms` doubles; `out` must be writable.
 */
enum RqStatus rq_dictionary_from_matrix(const double *data,
                                        size_t n_samples,
                                        size_t n_atoms,
                                        struct RqDictionary **out);

/**
 * # Safety
 * `dict` must be null or a handle from this library that has not been freed.
 */
void rq_dictionary_free(struct RqDictionary *dict);

/**
 * # Safety
 * `dict` must be a live handle.
 */
size_t rq_dictionary_n_samples(const struct RqDictionary *dict);

/**
 * # Safety
 * `dict` must be a live handle.
 */
size_t rq_dictionary_n_atoms(const struct RqDictionary *dict);

/**
 * New configuration with `r = 1`, the given `q` and noise mode, and default tolerances.
 *
 * # Safety
 * `out` must be writable.
 */
enum RqStatus rq_config_new(double q, enum RqNoiseMode mode, struct RqConfig **out);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum RqStatus rq_config_set_tolerance(struct RqConfig *config, double rel_tolerance);

/**
 * # Safety
 * `config` must be a live handle.
 */
enum RqStatus rq_config_set_max_iterations(struct RqConfig *config, size_t max_iterations);

/**
 * # Safety
 * `config` must be null or a handle that has not been freed.
 */
void rq_config_free(struct RqConfig *config);

/**
 * Solves for the observation `y` (`n_samples` interleaved complex values). A run that hits the
 * iteration limit still returns `RQ_STATUS_OK`; check [`rq_solution_converged`].
 *
 * # Safety
 * `dict` and `config` must be live handles, `y` must hold `2 * n_samples` doubles and `out`
 * must be writable.
 */
enum RqStatus rq_solve(const struct RqDictionary *dict,
                       const struct RqConfig *config,
                       const double *y,
                       size_t n_samples,
                       struct RqSolution **out);

/**
 * # Safety
 * `solution` must be null or a handle that has not been freed.
 */
void rq_solution_free(struct RqSolution *solution);

/**
 * # Safety
 * `solution` must be a live handle.
 */
size_t rq_solution_n_atoms(const struct RqSolution *solution);

/**
 * # Safety
 * `solution` must be a live handle.
 */
size_t rq_solution_n_noise(const struct RqSolution *solution);

/**
 * # Safety
 * `solution` must be a live handle.
 */
bool rq_solution_converged(const struct RqSolution *solution);

/**
 * # Safety
 * `solution` must be a live handle.
 */
size_t rq_solution_iterations(const struct RqSolution *solution);

/**
 * Final objective value, or NaN for a null handle.
 *
 * # Safety
 * `solution` must be a live handle.
 */
double rq_solution_objective(const struct RqSolution *solution);

/**
 * Copies the amplitudes as `2 * n_atoms` interleaved doubles; `capacity` counts doubles.
 *
 * # Safety
 * `solution` must be a live handle and `out` valid for `capacity` doubles.
 */
enum RqStatus rq_solution_amplitudes(const struct RqSolution *solution,
                                     double *out,
                                     size_t capacity);

/**
 * Copies the `n_atoms` powers.
 *
 * # Safety
 * `solution` must be a live handle and `out` valid for `capacity` doubles.
 */
enum RqStatus rq_solution_powers(const struct RqSolution *solution, double *out, size_t capacity);

/**
 * Copies the `n_noise` noise variances.
 *
 * # Safety
 * `solution` must be a live handle and `out` valid for `capacity` doubles.
 */
enum RqStatus rq_solution_noise(const struct RqSolution *solution, double *out, size_t capacity);

/**
 * `q = -ln N / (2 ln mu)`, the `q` whose square-root LASSO level is `mu` at `n_samples`.
 *
 * # Safety
 * `out` must be writable.
 */
enum RqStatus rq_q_from_mu(double mu, size_t n_samples, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RQ_SPICE_H */
