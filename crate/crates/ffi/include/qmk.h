#ifndef QMK_H
#define QMK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum QmkStatus {
  QMK_STATUS_OK = 0,
  QMK_STATUS_NULL_POINTER = 1,
  QMK_STATUS_INVALID_ARGUMENT = 2,
  QMK_STATUS_DIMENSION_MISMATCH = 3,
  QMK_STATUS_TRUNCATION = 4,
  QMK_STATUS_NON_CONVERGENCE = 5,
  QMK_STATUS_NUMERICAL = 6,
  QMK_STATUS_PANIC = 7,
} QmkStatus;

/**
 * Density operator expressed in a [`QmkRep`] basis.
 */
typedef struct QmkDensity QmkDensity;

/**
 * Solution of the coupling program.
 */
typedef struct QmkMkResult QmkMkResult;

/**
 * Truncated oscillator basis: `n_basis` levels per mode, `d` modes, scale λ.
 */
typedef struct QmkRep QmkRep;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL if none.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *qmk_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *qmk_version(void);

/**
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle pointer.
 */
enum QmkStatus qmk_rep_new(size_t n_basis, size_t d, double lambda, struct QmkRep **out);

/**
 * Dimension of the truncated Hilbert space, or 0 for a null handle.
 *
 * # Safety
 * `rep` must be null or a live handle from [`qmk_rep_new`].
 */
size_t qmk_rep_dim(const struct QmkRep *rep);

/**
 * # Safety
 * `rep` must be null or a handle from [`qmk_rep_new`] not yet freed.
 */
void qmk_rep_free(struct QmkRep *rep);

/**
 * Coherent state |q, p⟩ for a one-mode representation.
 *
 * # Safety
 * `rep` must be a live handle; `out` must be writable.
 */
enum QmkStatus qmk_density_coherent(const struct QmkRep *rep,
                                    double q,
                                    double p,
                                    struct QmkDensity **out);

/**
 * Fock state with occupation `levels[j]` in mode j; `n_levels` must equal d.
 *
 * # Safety
 * `rep` must be a live handle, `levels` must point to `n_levels` values and
 * `out` must be writable.
 */
enum QmkStatus qmk_density_fock(const struct QmkRep *rep,
                                const size_t *levels,
                                size_t n_levels,
                                struct QmkDensity **out);

/**
 * Density from a row-major `dim × dim` complex matrix given as separate
 * real and imaginary arrays. The matrix must be Hermitian, positive and of
 * unit trace.
 *
 * # Safety
 * `re` and `im` must each point to `dim * dim` values; `rep` must be a live
 * handle and `out` writable.
 */
enum QmkStatus qmk_density_from_matrix(const struct QmkRep *rep,
                                       const double *re,
                                       const double *im,
                                       size_t dim,
                                       struct QmkDensity **out);

/**
 * # Safety
 * `density` must be null or a live handle.
 */
size_t qmk_density_dim(const struct QmkDensity *density);

/**
 * # Safety
 * `density` must be null or a handle not yet freed.
 */
void qmk_density_free(struct QmkDensity *density);

/**
 * Solves the coupling program between `a` and `b`. `max_iters == 0`
 * keeps the default iteration budget.
 *
 * # Safety
 * All handles must be live; `out` must be writable.
 */
enum QmkStatus qmk_solve(const struct QmkDensity *a,
                         const struct QmkDensity *b,
                         const struct QmkRep *rep,
                         size_t max_iters,
                         struct QmkMkResult **out);

/**
 * Optimal objective, or NaN for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
double qmk_result_value_sq(const struct QmkMkResult *result);

/**
 * Certified lower bound on the optimum, or NaN for a null handle.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
double qmk_result_lower_bound(const struct QmkMkResult *result);

/**
 * # Safety
 * `result` must be null or a live handle.
 */
size_t qmk_result_iterations(const struct QmkMkResult *result);

/**
 * Side length of the coupling matrix.
 *
 * # Safety
 * `result` must be null or a live handle.
 */
size_t qmk_result_coupling_dim(const struct QmkMkResult *result);

/**
 * Copies the coupling row-major into `re` and `im`, each of length `len`,
 * which must be at least the squared coupling dimension.
 *
 * # Safety
 * `re` and `im` must each point to `len` writable values.
 */
enum QmkStatus qmk_result_coupling(const struct QmkMkResult *result,
                                   double *re,
                                   double *im,
                                   size_t len);

/**
 * # Safety
 * `result` must be null or a handle not yet freed.
 */
void qmk_result_free(struct QmkMkResult *result);

/**
 * Closed-form value for two one-mode coherent states at scale λ.
 */
double qmk_coherent_closed_form(double q1, double p1, double q2, double p2, double lambda);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* QMK_H */
