/* C interface for the user-level DP Huber-loss mean estimator. */

#ifndef HLM_H
#define HLM_H

/* Generated by cbindgen from hlm-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Dataset file formats accepted by `hlm_dataset_load`.
typedef enum HlmFormat {
  HLM_FORMAT_CSV_LONG = 0,
  HLM_FORMAT_JSONL_SHARDS = 1,
} HlmFormat;

// Status codes returned by every fallible entry point.
typedef enum HlmStatus {
  HLM_OK = 0,
  HLM_NULL_POINTER = 1,
  HLM_INVALID_UTF8 = 2,
  HLM_IO_ERROR = 3,
  HLM_PARSE_ERROR = 4,
  HLM_DIMENSION_ERROR = 5,
  HLM_VALIDATION_ERROR = 6,
  HLM_ARGUMENT_ERROR = 7,
  HLM_NUMERICAL_ERROR = 8,
  HLM_CONDITION_ERROR = 9,
  HLM_PANIC = 10,
} HlmStatus;

// Opaque dataset handle.
typedef struct HlmDataset HlmDataset;

// Opaque estimation-result handle.
typedef struct HlmResult HlmResult;

// Options for the Huber-loss mechanism. Sentinel conventions: values
// `<= 0` select the documented default where one exists.
typedef struct HlmEstimateOptions {
  double epsilon;
  double delta;
  // Clip radius R_c.
  double radius;
  // 0 = bounded support, 1 = heavy tail.
  int32_t regime;
  // Bounded support radius; `<= 0` falls back to `radius`.
  double support_radius;
  // Heavy-tail moment order p (>= 2).
  double moment_order;
  // Heavy-tail moment bound.
  double moment_bound;
  // Threshold constant; `<= 0` selects 10% above the regime floor.
  double c_t;
  // 0 = balanced, 1 = imbalanced.
  int32_t mode;
  // Imbalance degree; `<= 0` derives it from the public sizes.
  double gamma;
  // `> 0` switches to the tuned rule T_i = a / sqrt(m_i ^ m_c).
  double threshold_multiplier;
  // 0 = greedy outlier search, 1 = exact (small n only).
  int32_t delta_method;
  uint64_t seed;
} HlmEstimateOptions;

// Options for the two-stage baseline.
typedef struct HlmWmeOptions {
  double epsilon;
  double delta;
  // Stage-1 concentration radius (bin width is 2 tau).
  double tau;
  // Stage-1 budget fraction; `<= 0` means an even split.
  double stage1_fraction;
  double range_lo;
  double range_hi;
  uint64_t seed;
} HlmWmeOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread; valid
// until the next failing call.
const char *hlm_last_error_message(void);

// Loads a dataset file. On success writes an owned handle to `out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum HlmStatus hlm_dataset_load(const char *path, enum HlmFormat format, struct HlmDataset **out);

// # Safety
// `ds` must be a handle from `hlm_dataset_load` (or null).
void hlm_dataset_free(struct HlmDataset *ds);

// # Safety
// `ds` must be a valid dataset handle.
size_t hlm_dataset_users(const struct HlmDataset *ds);

// # Safety
// `ds` must be a valid dataset handle.
size_t hlm_dataset_dim(const struct HlmDataset *ds);

// # Safety
// `ds` must be a valid dataset handle.
size_t hlm_dataset_total_samples(const struct HlmDataset *ds);

// Runs the private Huber-loss estimator. On success writes an owned
// result handle to `out`.
//
// # Safety
// All pointers must be valid; `ds` must be a dataset handle.
enum HlmStatus hlm_estimate(const struct HlmDataset *ds,
                            const struct HlmEstimateOptions *opts,
                            struct HlmResult **out);

// Runs the two-stage baseline. On success writes an owned result
// handle to `out`.
//
// # Safety
// All pointers must be valid; `ds` must be a dataset handle.
enum HlmStatus hlm_wme_estimate(const struct HlmDataset *ds,
                                const struct HlmWmeOptions *opts,
                                struct HlmResult **out);

// # Safety
// `res` must be a result handle (or null).
void hlm_result_free(struct HlmResult *res);

// # Safety
// `res` must be a valid result handle.
size_t hlm_result_dim(const struct HlmResult *res);

// Copies the private output vector into `buf` (capacity `len`).
//
// # Safety
// `buf` must point to at least `len` doubles.
enum HlmStatus hlm_result_output(const struct HlmResult *res, double *buf, size_t len);

// Per-coordinate noise standard deviation of the result.
//
// # Safety
// `res` must be a valid result handle.
double hlm_result_noise_scale(const struct HlmResult *res);

// Smooth sensitivity the noise was calibrated to, or NaN for baseline
// results, which carry no sensitivity report.
//
// # Safety
// `res` must be a valid result handle.
double hlm_result_smooth_sensitivity(const struct HlmResult *res);

// Serializes the full audit trail as a JSON string; release it with
// `hlm_string_free`.
//
// # Safety
// `res` must be a valid result handle.
char *hlm_result_to_json(const struct HlmResult *res);

// # Safety
// `s` must come from `hlm_result_to_json` (or be null).
void hlm_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HLM_H */
