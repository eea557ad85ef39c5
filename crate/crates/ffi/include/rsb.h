#ifndef RSB_H
#define RSB_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes. `RSB_STATUS_OK` is zero; everything else is a failure.
 */
typedef enum RsbStatus {
  RSB_STATUS_OK = 0,
  RSB_STATUS_NULL_POINTER = 1,
  RSB_STATUS_INVALID_PARAMETER = 2,
  RSB_STATUS_ORDERING_VIOLATION = 3,
  RSB_STATUS_RANGE_VIOLATION = 4,
  RSB_STATUS_SHAPE_MISMATCH = 5,
  RSB_STATUS_NON_FINITE_INTEGRAND = 6,
  RSB_STATUS_BUDGET_EXCEEDED = 7,
  RSB_STATUS_SUSCEPTIBILITY_DIVERGENCE = 8,
  RSB_STATUS_DOMAIN_ERROR = 9,
  RSB_STATUS_BRACKET_VIOLATION = 10,
  RSB_STATUS_INDEX_OUT_OF_RANGE = 11,
  RSB_STATUS_PANIC = 12,
} RsbStatus;

/**
 * Opaque model: parameters plus quadrature and solver settings.
 */
typedef struct RsbModel RsbModel;

/**
 * Opaque list of converged branches, highest pressure first.
 */
typedef struct RsbSolution RsbSolution;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Create an SK model with inverse temperature `beta`, signal `j0` and noise scale `j`.
 *
 * # Safety
 * `out` must be a valid, writable pointer. The handle written there must be released
 * with [`rsb_model_free`].
 */
enum RsbStatus rsb_model_new_sk(double beta, double j0, double j, struct RsbModel **out);

/**
 * Create a Hopfield model with inverse temperature `beta` and load `alpha`.
 *
 * # Safety
 * Same contract as [`rsb_model_new_sk`].
 */
enum RsbStatus rsb_model_new_hopfield(double beta, double alpha, struct RsbModel **out);

/**
 * Set the quadrature nodes per Gaussian level.
 *
 * # Safety
 * `model` must be a live handle from `rsb_model_new_*`.
 */
enum RsbStatus rsb_model_set_nodes(struct RsbModel *model, size_t nodes);

/**
 * Set damping, tolerance and iteration cap of the fixed-point solver.
 *
 * # Safety
 * `model` must be a live handle from `rsb_model_new_*`.
 */
enum RsbStatus rsb_model_set_solver(struct RsbModel *model,
                                    double damping,
                                    double tol,
                                    size_t max_iter);

/**
 * Release a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from `rsb_model_new_*` not yet freed.
 */
void rsb_model_free(struct RsbModel *model);

/**
 * Quenched pressure at level `k` for magnetization `m`, overlaps `qs` (k+1 values) and
 * Parisi parameters `thetas` (k values). Hopfield `p`s follow from the `q`s.
 *
 * # Safety
 * `model` must be live; `qs` must point to k+1 and `thetas` to k readable doubles
 * (`thetas` may be null when k = 0); `out` must be writable.
 */
enum RsbStatus rsb_pressure(const struct RsbModel *model,
                            size_t k,
                            double m,
                            const double *qs,
                            const double *thetas,
                            double *out);

/**
 * One application of the self-consistency map. Writes m' to `out_m` and the k+1
 * values q' to `out_qs`.
 *
 * # Safety
 * As for [`rsb_pressure`]; `out_m` must be writable and `out_qs` must have room for
 * k+1 doubles.
 */
enum RsbStatus rsb_sce_map(const struct RsbModel *model,
                           size_t k,
                           double m,
                           const double *qs,
                           const double *thetas,
                           double *out_m,
                           double *out_qs);

/**
 * Solve from the default starts at level `k` with fixed `thetas` (k values). The
 * converged branches, highest pressure first, go into a new solution handle; zero
 * branches is not an error.
 *
 * # Safety
 * `model` must be live, `thetas` must point to k readable doubles (null allowed when
 * k = 0) and `out` must be writable. Release the result with [`rsb_solution_free`].
 */
enum RsbStatus rsb_solve(const struct RsbModel *model,
                         size_t k,
                         const double *thetas,
                         struct RsbSolution **out);

/**
 * Number of converged branches.
 *
 * # Safety
 * `solution` must be a live handle from [`rsb_solve`]; `out` must be writable.
 */
enum RsbStatus rsb_solution_count(const struct RsbSolution *solution, size_t *out);

/**
 * Read branch `index`: magnetization, k+1 overlaps, pressure and final residual.
 *
 * # Safety
 * `solution` must be live; `out_m`, `out_pressure` and `out_residual` must be
 * writable and `out_qs` must have room for k+1 doubles.
 */
enum RsbStatus rsb_solution_branch(const struct RsbSolution *solution,
                                   size_t index,
                                   double *out_m,
                                   double *out_qs,
                                   double *out_pressure,
                                   double *out_residual);

/**
 * Release a solution. Null is ignored.
 *
 * # Safety
 * `solution` must be null or a handle from [`rsb_solve`] not yet freed.
 */
void rsb_solution_free(struct RsbSolution *solution);

/**
 * Copy the last error message of this thread into `buf` (NUL-terminated, truncated
 * to `len - 1` bytes). Returns the full message length in bytes, excluding the NUL.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t rsb_last_error_message(char *buf, size_t len);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rsb_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RSB_H */
