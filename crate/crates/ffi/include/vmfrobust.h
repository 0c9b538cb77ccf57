#ifndef VMFROBUST_H
#define VMFROBUST_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum VmfStatus {
  VMF_STATUS_OK = 0,
  VMF_STATUS_NULL_POINTER = 1,
  VMF_STATUS_INVALID_ARGUMENT = 2,
  VMF_STATUS_DIMENSION_MISMATCH = 3,
  VMF_STATUS_NON_CONVERGENCE = 4,
  VMF_STATUS_DIVERGED = 5,
  VMF_STATUS_DEGENERATE_DATA = 6,
  VMF_STATUS_SINGULAR = 7,
  VMF_STATUS_QUADRATURE = 8,
  VMF_STATUS_INVALID_CONFIG = 9,
  VMF_STATUS_BUFFER_TOO_SMALL = 10,
  VMF_STATUS_PANIC = 11,
} VmfStatus;

typedef enum VmfEstimator {
  VMF_ESTIMATOR_MLE = 0,
  VMF_ESTIMATOR_TYPE1 = 1,
  VMF_ESTIMATOR_TYPE0 = 2,
} VmfEstimator;

/**
 * Unit vectors owned by the library.
 */
typedef struct VmfDataset VmfDataset;

/**
 * Result of `vmf_fit`.
 */
typedef struct VmfFit VmfFit;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *vmf_last_error(void);

/**
 * `A_p(x) = I_{p/2}(x) / I_{p/2-1}(x)`.
 */
enum VmfStatus vmf_a_ratio(size_t p, double x, double *out);

/**
 * `κ` with `A_p(κ) = r`, for `r` in `[0, 1)`.
 */
enum VmfStatus vmf_a_ratio_inv(size_t p, double r, double *out);

/**
 * `ln C_p(κ)` of the vMF density `C_p(κ) exp(κ μ'x)`.
 */
enum VmfStatus vmf_log_norm_const(size_t p, double kappa, double *out);

/**
 * Copies `n × p` row-major coordinates, normalising each row.
 */
enum VmfStatus vmf_dataset_new(size_t p, const double *coords, size_t n, struct VmfDataset **out);

enum VmfStatus vmf_dataset_len(const struct VmfDataset *ds, size_t *out);

/**
 * Copies the points into `buf`, which must hold `len × p` doubles.
 */
enum VmfStatus vmf_dataset_copy(const struct VmfDataset *ds, double *buf, size_t cap);

void vmf_dataset_free(struct VmfDataset *ds);

/**
 * Draws `n` points from `(1 - ε) vM_p(ξ) + ε G`, where `G` is `vM_p(η)` or
 * uniform when `eta` is NULL.
 */
enum VmfStatus vmf_sample(size_t p,
                          const double *xi,
                          double epsilon,
                          const double *eta,
                          size_t n,
                          uint64_t seed,
                          struct VmfDataset **out);

/**
 * Fits `estimator` to `ds`. `max_iter = 0` or `tol <= 0` select defaults.
 * On non-convergence no handle is returned.
 */
enum VmfStatus vmf_fit(const struct VmfDataset *ds,
                       enum VmfEstimator estimator,
                       double tuning,
                       size_t max_iter,
                       double tol,
                       struct VmfFit **out);

/**
 * Copies `ξ̂` into `buf` (at least `p` doubles).
 */
enum VmfStatus vmf_fit_xi(const struct VmfFit *f, double *buf, size_t cap);

enum VmfStatus vmf_fit_kappa(const struct VmfFit *f, double *out);

enum VmfStatus vmf_fit_iterations(const struct VmfFit *f, size_t *out);

void vmf_fit_free(struct VmfFit *f);

/**
 * Half-angle `δ` of the cap around `-μ` with probability `alpha`.
 */
enum VmfStatus vmf_outlier_delta(size_t p, const double *xi, double alpha, double *out);

/**
 * Influence function at `x` under the mixture `(ξ, ε, η)`; writes `p`
 * doubles to `out`.
 */
enum VmfStatus vmf_influence(size_t p,
                             enum VmfEstimator estimator,
                             double tuning,
                             const double *xi,
                             double epsilon,
                             const double *eta,
                             const double *x,
                             double *out);

/**
 * Sandwich covariance `V` (`p × p` row-major) and the condition number of
 * `M`, which may be NULL.
 */
enum VmfStatus vmf_asymptotic_cov(size_t p,
                                  enum VmfEstimator estimator,
                                  double tuning,
                                  const double *xi,
                                  double epsilon,
                                  const double *eta,
                                  double *v_out,
                                  double *condition_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* VMFROBUST_H */
