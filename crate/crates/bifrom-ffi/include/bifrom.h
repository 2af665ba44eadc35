/* C interface of the bifrom reduced-order modeling toolkit. */

#ifndef BIFROM_H
#define BIFROM_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible entry point.
 */
typedef enum BifromStatus {
  BIFROM_STATUS_OK = 0,
  BIFROM_STATUS_NULL_POINTER = 1,
  BIFROM_STATUS_INVALID_CONFIG = 2,
  BIFROM_STATUS_CONVERGENCE_FAILURE = 3,
  BIFROM_STATUS_IO_ERROR = 4,
  BIFROM_STATUS_INVALID_ARGUMENT = 5,
} BifromStatus;

/**
 * Opaque full-order model handle: configuration plus discrete operators.
 */
typedef struct BifromModel BifromModel;

/**
 * Solve metadata reported by `bifrom_model_steady_solve`.
 */
typedef struct BifromSolveInfo {
  uint64_t steps;
  /**
   * 1 when the stopping rule fired within the step budget.
   */
  int32_t converged;
  /**
   * Last increment measured by the stopping rule.
   */
  double final_increment;
} BifromSolveInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Copies the most recent error message of this thread into `buf`
 * (NUL-terminated, truncated to `cap` bytes) and returns the full length
 * including the terminator. A zero `cap` just queries the length.
 *
 * # Safety
 * `buf` must point to at least `cap` writable bytes, or be null with
 * `cap == 0`.
 */
size_t bifrom_last_error(char *buf, size_t cap);

/**
 * Version of the underlying toolkit as a static string; never freed.
 */
const char *bifrom_version(void);

/**
 * Creates a model. `config_text` may be null for the defaults, or hold the
 * same UTF-8 `key=value` lines the CLI accepts (unknown keys rejected).
 *
 * # Safety
 * `config_text`, when non-null, must be a NUL-terminated string; `out`
 * must be a valid pointer.
 */
enum BifromStatus bifrom_model_create(const char *config_text, struct BifromModel **out);

/**
 * Releases a model handle; null is a no-op.
 *
 * # Safety
 * `model` must have been returned by `bifrom_model_create` and not freed
 * before.
 */
void bifrom_model_free(struct BifromModel *model);

/**
 * Length of the stacked state vector (both fields).
 *
 * # Safety
 * `model` must be a live handle.
 */
size_t bifrom_model_state_len(const struct BifromModel *model);

/**
 * Critical reaction strength of the trivial branch at diffusivity `mu2`.
 *
 * # Safety
 * `model` must be a live handle.
 */
double bifrom_model_critical_mu1(const struct BifromModel *model, double mu2);

/**
 * Marches the model to a steady state at `(mu1, mu2)` from the branch-bias
 * guess and writes the stacked state into `state_out`.
 *
 * Returns `ConvergenceFailure` when the march exhausts its step budget or
 * leaves the finite range; the state written so far is still valid.
 *
 * # Safety
 * `model` must be a live handle; `state_out` must point to
 * `bifrom_model_state_len(model)` writable doubles; `info`, when non-null,
 * must be a valid pointer.
 */
enum BifromStatus bifrom_model_steady_solve(const struct BifromModel *model,
                                            double mu1,
                                            double mu2,
                                            double *state_out,
                                            size_t state_len,
                                            struct BifromSolveInfo *info);

/**
 * Probe observable: the first-field value at the node nearest the domain
 * midpoint.
 *
 * # Safety
 * `state` must point to `len` readable doubles.
 */
double bifrom_probe(const double *state, size_t len);

/**
 * Saves a row-major matrix in the toolkit's binary format.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `data` must point to
 * `rows * cols` readable doubles (may be null when the matrix is empty).
 */
enum BifromStatus bifrom_matrix_save(const char *path,
                                     size_t rows,
                                     size_t cols,
                                     const double *data);

/**
 * Loads a matrix saved by `bifrom_matrix_save` (or the pipeline). On
 * success `*data_out` owns `*rows * *cols` doubles in row-major order;
 * release it with `bifrom_buffer_free`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `rows`, `cols` and `data_out`
 * must be valid pointers.
 */
enum BifromStatus bifrom_matrix_load(const char *path,
                                     size_t *rows,
                                     size_t *cols,
                                     double **data_out);

/**
 * Releases a buffer returned by `bifrom_matrix_load`.
 *
 * # Safety
 * `data` must have come from `bifrom_matrix_load` with the matching `len`
 * (`rows * cols`), or be null.
 */
void bifrom_buffer_free(double *data, size_t len);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BIFROM_H */
