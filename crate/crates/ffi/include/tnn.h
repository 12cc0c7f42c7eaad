#ifndef TNN_H
#define TNN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum TnnStatus {
  TNN_STATUS_OK = 0,
  TNN_STATUS_NULL_POINTER = 1,
  TNN_STATUS_INVALID_ARGUMENT = 2,
  TNN_STATUS_CONFIG = 3,
  TNN_STATUS_NUMERIC = 4,
  TNN_STATUS_DEGENERATE = 5,
  TNN_STATUS_UNSUPPORTED = 6,
  TNN_STATUS_IO = 7,
  TNN_STATUS_PANIC = 8,
} TnnStatus;

/**
 * Opaque solver handle.
 */
typedef struct TnnSolver TnnSolver;

/**
 * Loss and errors of one model state; NaN where undefined.
 */
typedef struct TnnMetrics {
  double loss;
  double lambda_estimate;
  double e_lambda;
  double e_l2;
  double e_h1;
} TnnMetrics;

/**
 * Outcome of [`tnn_solver_train`]. `best` holds the minimum of each error
 * over the logged epochs, `last` the state after the final epoch.
 */
typedef struct TnnTrainResult {
  uint64_t epochs_run;
  bool stopped_early;
  struct TnnMetrics last;
  struct TnnMetrics best;
} TnnTrainResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tnn_version(void);

/**
 * Message of the last failed call on this thread, or an empty string. The
 * pointer stays valid until the next call into the library on this thread.
 */
const char *tnn_last_error(void);

/**
 * Writes the `n` Gauss–Legendre nodes and weights on `[-1, 1]` into the
 * caller's arrays, each of length `n`.
 *
 * # Safety
 * `nodes` and `weights` must each point to `n` writable doubles.
 */
enum TnnStatus tnn_gauss_legendre(size_t n, double *nodes, double *weights);

/**
 * Builds a solver from TOML config text and initializes its model.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TnnStatus tnn_solver_new(const char *config_toml, struct TnnSolver **out);

/**
 * Releases a solver. NULL is ignored.
 *
 * # Safety
 * `solver` must come from [`tnn_solver_new`] and not be used afterwards.
 */
void tnn_solver_free(struct TnnSolver *solver);

/**
 * # Safety
 * `solver` must be a live handle and `out` a valid pointer.
 */
enum TnnStatus tnn_solver_dim(const struct TnnSolver *solver, size_t *out);

/**
 * Runs the configured schedule from the current parameters with a fresh
 * optimizer state. `out` may be NULL.
 *
 * # Safety
 * `solver` must be a live handle; `out` must be NULL or valid.
 */
enum TnnStatus tnn_solver_train(struct TnnSolver *solver, struct TnnTrainResult *out);

/**
 * Loss and errors of the current model.
 *
 * # Safety
 * `solver` must be a live handle and `out` a valid pointer.
 */
enum TnnStatus tnn_solver_metrics(const struct TnnSolver *solver, struct TnnMetrics *out);

/**
 * Evaluates `Ψ` at `count` points stored row-major in `points`
 * (`count * dim` doubles) and writes `count` values to `values`.
 *
 * # Safety
 * `points` must hold `count * dim` doubles and `values` `count` doubles.
 */
enum TnnStatus tnn_solver_evaluate(const struct TnnSolver *solver,
                                   const double *points,
                                   size_t count,
                                   size_t dim,
                                   double *values);

/**
 * Writes the current model as a JSON checkpoint.
 *
 * # Safety
 * `solver` must be a live handle and `path` a NUL-terminated string.
 */
enum TnnStatus tnn_solver_save_checkpoint(const struct TnnSolver *solver, const char *path);

/**
 * Replaces the model with a checkpoint whose shape matches the problem.
 *
 * # Safety
 * `solver` must be a live handle and `path` a NUL-terminated string.
 */
enum TnnStatus tnn_solver_load_checkpoint(struct TnnSolver *solver, const char *path);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TNN_H */
