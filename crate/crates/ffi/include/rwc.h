#ifndef RWC_H
#define RWC_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

typedef enum RwcMethod {
  RWC_METHOD_SWC = 0,
  RWC_METHOD_TWC = 1,
  RWC_METHOD_RWC = 2,
  RWC_METHOD_ACI = 3,
} RwcMethod;

// Result code of every call. Values 2-4 match the CLI exit codes.
typedef enum RwcStatus {
  RWC_STATUS_OK = 0,
  // A required pointer argument was null.
  RWC_STATUS_NULL_POINTER = 1,
  RWC_STATUS_INVALID_CONFIG = 2,
  RWC_STATUS_DATA_ERROR = 3,
  RWC_STATUS_NUMERIC_ERROR = 4,
  // A Rust panic was caught at the boundary.
  RWC_STATUS_PANIC = 5,
} RwcStatus;

// Opaque calibrator handle.
typedef struct RwcCalibrator RwcCalibrator;

// Calibrator settings. `h = INFINITY` disables the regime kernel and
// `n_min = 0` disables the effective-sample-size safeguard.
typedef struct RwcConfig {
  enum RwcMethod method;
  double alpha;
  size_t m;
  double lambda;
  double h;
  size_t n_min;
  bool finite_sample_correction;
  double aci_gamma;
  double aci_clip_min;
  double aci_clip_max;
} RwcConfig;

// An issued bound. `alpha_t` is NaN except for ACI.
typedef struct RwcBound {
  size_t index;
  double qhat;
  double chat;
  double upper;
  double n_eff;
  double tau;
  bool fallback_used;
  double alpha_t;
  double n_eff_kernel;
} RwcBound;

// A bound together with the realized loss.
typedef struct RwcStep {
  struct RwcBound bound;
  double loss;
  double score;
  bool exceed;
} RwcStep;

typedef struct RwcChristoffersen {
  size_t n00;
  size_t n01;
  size_t n10;
  size_t n11;
  double lr_uc;
  double lr_ind;
  double p_ind;
  double lr_cc;
  double p_cc;
} RwcChristoffersen;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *rwc_version(void);

// Message of the last failed call on this thread, or null after a success.
// The pointer stays valid until the next call on the same thread.
const char *rwc_last_error_message(void);

// Default settings for `method` at level `alpha = 0.01`.
struct RwcConfig rwc_config_default(enum RwcMethod method);

// Creates a calibrator. On success `*out_handle` owns a new handle.
//
// # Safety
// `config` must point to a valid `RwcConfig`; `out_handle` must be writable.
enum RwcStatus rwc_calibrator_new(const struct RwcConfig *config,
                                  struct RwcCalibrator **out_handle);

// Releases a handle. Null is ignored.
//
// # Safety
// `handle` must come from `rwc_calibrator_new` and not be used afterwards.
void rwc_calibrator_free(struct RwcCalibrator *handle);

// Adds a historical score `loss - qhat` with regime features `(z0, z1)`
// without issuing a bound. Indices must increase strictly.
//
// # Safety
// `handle` must be a live handle.
enum RwcStatus rwc_calibrator_prime(struct RwcCalibrator *handle,
                                    size_t index,
                                    double score,
                                    double z0,
                                    double z1);

// Issues the calibrated bound for step `t` from the base forecast `qhat`.
//
// # Safety
// `handle` must be a live handle; `out_bound` may be null.
enum RwcStatus rwc_calibrator_issue(struct RwcCalibrator *handle,
                                    size_t t,
                                    double qhat,
                                    double z0,
                                    double z1,
                                    struct RwcBound *out_bound);

// Records the realized loss for the pending bound.
//
// # Safety
// `handle` must be a live handle; `out_step` may be null.
enum RwcStatus rwc_calibrator_observe(struct RwcCalibrator *handle,
                                      double loss,
                                      struct RwcStep *out_step);

// Number of scores currently in the calibration buffer.
//
// # Safety
// `handle` must be a live handle.
enum RwcStatus rwc_calibrator_len(const struct RwcCalibrator *handle, size_t *out_len);

// Nonconformity score `loss - qhat`.
double rwc_score(double loss, double qhat);

// Smallest value whose cumulative normalized weight reaches `level`.
//
// # Safety
// `values` and `weights` must each hold `len` elements.
enum RwcStatus rwc_weighted_quantile(const double *values,
                                     const double *weights,
                                     size_t len,
                                     double level,
                                     double *out_value);

// Randomized weighted conformal p-value of `s_test` against `scores`.
//
// # Safety
// `scores` and `weights` must each hold `len` elements.
enum RwcStatus rwc_conformal_pvalue(const double *scores,
                                    const double *weights,
                                    size_t len,
                                    double s_test,
                                    double w_test,
                                    double u,
                                    double *out_p);

// Kupiec unconditional-coverage statistic and p-value for `x` exceedances in `n`.
//
// # Safety
// `out_lr` and `out_p` must be writable.
enum RwcStatus rwc_kupiec(size_t n, size_t x, double alpha, double *out_lr, double *out_p);

// Christoffersen independence and conditional-coverage tests on 0/1 indicators.
//
// # Safety
// `indicators` must hold `len` bytes; nonzero means exceedance.
enum RwcStatus rwc_christoffersen(const uint8_t *indicators,
                                  size_t len,
                                  double alpha,
                                  struct RwcChristoffersen *out_result);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RWC_H */
