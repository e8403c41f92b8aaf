#ifndef PANELFACTOR_H
#define PANELFACTOR_H

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

/**
 * Status codes. Values 10–29 are input errors, 30 and above numerical ones.
 */
typedef enum PfStatus {
  PF_STATUS_OK = 0,
  PF_STATUS_NULL_POINTER = 1,
  PF_STATUS_INVALID_UTF8 = 2,
  PF_STATUS_LENGTH_MISMATCH = 3,
  PF_STATUS_PANIC = 4,
  PF_STATUS_MISSING_COLUMN = 10,
  PF_STATUS_UNBALANCED_PANEL = 11,
  PF_STATUS_DUPLICATE_CELL = 12,
  PF_STATUS_NON_FINITE_VALUE = 13,
  PF_STATUS_TIME_VARYING_COLUMN_VIOLATION = 14,
  PF_STATUS_CONSTANT_REGRESSOR = 15,
  PF_STATUS_CSV = 16,
  PF_STATUS_IO = 17,
  PF_STATUS_INDEX_OUT_OF_RANGE = 18,
  PF_STATUS_DIMENSION_MISMATCH = 19,
  PF_STATUS_DEGENERATE_SCALE = 20,
  PF_STATUS_INVALID_ARGUMENT = 21,
  PF_STATUS_GRID_OUTSIDE_HULL = 22,
  PF_STATUS_INSUFFICIENT_LOCAL_DATA = 30,
  PF_STATUS_SINGULAR_DESIGN = 31,
  PF_STATUS_ZERO_VARIANCE = 32,
  PF_STATUS_TOO_MANY_FAILURES = 33,
} PfStatus;

/**
 * Opaque balanced panel.
 */
typedef struct PfDataset PfDataset;

/**
 * Opaque profile fit, carrying the bandwidths it was computed with.
 */
typedef struct PfFit PfFit;

/**
 * Specification test output. `p_bootstrap` is NaN when no bootstrap was run.
 */
typedef struct PfTestResult {
  double v_nt;
  double upsilon0_hat;
  double standardized;
  double p_asymptotic;
  double p_bootstrap;
  size_t bootstrap_replications;
  uint64_t n_pairs;
} PfTestResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Build a dataset from unit-major arrays: `y` has `n_units * n_periods`
 * entries, `x` and `w` are row-major with `d_x` and `d_w` columns.
 *
 * # Safety
 * The arrays must hold at least the stated number of doubles and `out`
 * must be a valid pointer to write a handle to.
 */
enum PfStatus pf_dataset_new(size_t n_units,
                             size_t n_periods,
                             const double *y,
                             const double *x,
                             size_t d_x,
                             const double *w,
                             size_t d_w,
                             struct PfDataset **out);

/**
 * Load a long-format CSV. `x` and `w` are comma-separated column lists;
 * `time_only` may be null.
 *
 * # Safety
 * String arguments must be null-terminated; `out` must be writable.
 */
enum PfStatus pf_dataset_load_csv(const char *path,
                                  const char *unit,
                                  const char *time,
                                  const char *y,
                                  const char *x,
                                  const char *w,
                                  const char *time_only,
                                  struct PfDataset **out);

/**
 * # Safety
 * `ds` must come from a `pf_dataset_*` constructor and not be used afterwards.
 */
void pf_dataset_free(struct PfDataset *ds);

/**
 * Panel sizes; any output pointer may be null.
 *
 * # Safety
 * `ds` must be a live dataset handle.
 */
enum PfStatus pf_dataset_dims(const struct PfDataset *ds,
                              size_t *n_units,
                              size_t *n_periods,
                              size_t *d_x,
                              size_t *d_w);

/**
 * Profile least-squares fit. Pass a null pointer (or zero length) for
 * either bandwidth vector to use the rule of thumb; a single value is
 * applied to every coordinate.
 *
 * # Safety
 * `ds` must be a live handle; bandwidth arrays must hold the stated lengths.
 */
enum PfStatus pf_fit(const struct PfDataset *ds,
                     const double *h_est,
                     size_t n_h_est,
                     const double *h_test,
                     size_t n_h_test,
                     struct PfFit **out);

/**
 * # Safety
 * `fit` must come from [`pf_fit`] and not be used afterwards.
 */
void pf_fit_free(struct PfFit *fit);

/**
 * Number of slope coefficients, or 0 for a null handle.
 *
 * # Safety
 * `fit` must be null or a live handle.
 */
size_t pf_fit_d_x(const struct PfFit *fit);

/**
 * `β̂`; `len` must equal `d_x`.
 *
 * # Safety
 * `fit` must be a live handle and `out` must hold `len` doubles.
 */
enum PfStatus pf_fit_beta(const struct PfFit *fit, double *out, size_t len);

/**
 * Clustered standard errors; `len` must equal `d_x`.
 *
 * # Safety
 * `fit` must be a live handle and `out` must hold `len` doubles.
 */
enum PfStatus pf_fit_std_errors(const struct PfFit *fit, double *out, size_t len);

/**
 * Row-major covariance of `β̂`; `len` must equal `d_x * d_x`.
 *
 * # Safety
 * `fit` must be a live handle and `out` must hold `len` doubles.
 */
enum PfStatus pf_fit_vcov(const struct PfFit *fit, double *out, size_t len);

/**
 * `ĝ` at the sample rows; `len` must equal `n_units * n_periods`.
 *
 * # Safety
 * `fit` must be a live handle and `out` must hold `len` doubles.
 */
enum PfStatus pf_fit_g_hat(const struct PfFit *fit, double *out, size_t len);

/**
 * Residuals; `len` must equal `n_units * n_periods`.
 *
 * # Safety
 * `fit` must be a live handle and `out` must hold `len` doubles.
 */
enum PfStatus pf_fit_residuals(const struct PfFit *fit, double *out, size_t len);

/**
 * Specification test on `fit`. `bootstrap = 0` skips the bootstrap p-value.
 *
 * # Safety
 * `ds` and `fit` must be live handles, with `fit` computed from `ds`.
 */
enum PfStatus pf_spec_test(const struct PfDataset *ds,
                           const struct PfFit *fit,
                           size_t bootstrap,
                           uint64_t seed,
                           struct PfTestResult *out);

/**
 * Message for the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next `pf_*` call on the same thread.
 */
const char *pf_last_error_message(void);

/**
 * Static name of a status code.
 */
const char *pf_status_name(enum PfStatus status);

/**
 * Library version string.
 */
const char *pf_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PANELFACTOR_H */
