/*
 * C interface to the adaptable streaming test-time adaptation engine.
 *
 * All objects are opaque handles created and destroyed by this library.
 * Every function returns an at_status; on failure, at_last_error() returns
 * a message describing the most recent error raised on the calling thread.
 */
#ifndef ADAPTABLE_ADAPTABLE_H
#define ADAPTABLE_ADAPTABLE_H

#include <stddef.h>
#include <stdint.h>

#if defined(ADAPTABLE_BUILDING_LIBRARY)
#define AT_API __attribute__((visibility("default")))
#else
#define AT_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum at_status {
  AT_OK = 0,
  AT_ERR_INVALID_ARGUMENT = 1,
  AT_ERR_PARSE = 2,
  AT_ERR_SCHEMA = 3,
  AT_ERR_DIMENSION = 4,
  AT_ERR_NUMERIC = 5,
  AT_ERR_IO = 6,
  AT_ERR_CONFIG = 7,
  AT_ERR_INTERNAL = 99
} at_status;

typedef enum at_mode {
  AT_MODE_FULL = 0,
  AT_MODE_ALIGN_ONLY = 1,
  AT_MODE_SOURCE_ONLY = 2
} at_mode;

typedef struct at_handler at_handler;
typedef struct at_run at_run;

AT_API const char* at_version(void);
AT_API const char* at_status_string(at_status status);
/* Message of the last failure on this thread; "" if none. */
AT_API const char* at_last_error(void);

/* Silences (0) or enables (nonzero) warnings printed to stderr. */
AT_API void at_set_warnings(int enabled);

/* ---------------------------------------------------------------------- */
/* Label distribution handler over raw logits.                             */

/* `source_prior` holds num_classes strictly positive entries summing to 1. */
AT_API at_status at_handler_create(const double* source_prior, int num_classes, double alpha,
                                   double q_low, double q_high, at_mode mode, at_handler** out);

/*
 * Adapts one batch of `n` rows of logits (row-major n x C). `temperatures`
 * holds the calibrator's per-sample T_i or is NULL for T_i = 1.
 * `out_probs` (n x C) and `out_pred` (n, zero-based) may each be NULL.
 */
AT_API at_status at_handler_adapt(at_handler* h, const double* logits, size_t n,
                                  const double* temperatures, double* out_probs, int32_t* out_pred);

/* Copies the current online target label estimate (C entries). */
AT_API at_status at_handler_online_estimate(const at_handler* h, double* out);

AT_API void at_handler_destroy(at_handler* h);

/* ---------------------------------------------------------------------- */
/* Configured runs.                                                        */

/* `out_dir` may be NULL; otherwise it overrides ADAPTABLE_OUT_DIR and the
 * config's output_dir. */
AT_API at_status at_run_open(const char* config_path, const char* out_dir, at_run** out);
AT_API at_status at_run_set_seed(at_run* run, uint64_t seed);
AT_API at_status at_run_set_mode(at_run* run, at_mode mode);

/* `stage` is one of train, calibrate, simulate, adapt, evaluate, pipeline. */
AT_API at_status at_run_stage(at_run* run, const char* stage);

/* Output directory in use (valid until the next call on `run`). */
AT_API const char* at_run_output_dir(at_run* run);

/*
 * Writes the NUL-terminated summary JSON of the last evaluate stage into
 * `buf` if it fits; `needed` receives the required size including the NUL.
 */
AT_API at_status at_run_summary_json(at_run* run, char* buf, size_t capacity, size_t* needed);

AT_API void at_run_close(at_run* run);

/* ---------------------------------------------------------------------- */
/* Metric helpers.                                                         */

/* Labels and predictions are zero-based. */
AT_API at_status at_classification_metrics(const int32_t* predictions, const int32_t* labels,
                                           size_t n, int num_classes, double* balanced_accuracy,
                                           double* macro_f1);
AT_API at_status at_js_divergence(const double* p, const double* q, size_t len, double* out);
AT_API at_status at_expected_calibration_error(const double* confidences, const uint8_t* correct,
                                               size_t n, int num_bins, double* out);

#ifdef __cplusplus
}
#endif

#endif /* ADAPTABLE_ADAPTABLE_H */
