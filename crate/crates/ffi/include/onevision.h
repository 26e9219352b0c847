#ifndef ONEVISION_H
#define ONEVISION_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum OvStatus {
  OV_STATUS_OK = 0,
  OV_STATUS_NULL_ARGUMENT = 1,
  OV_STATUS_INVALID_ARGUMENT = 2,
  OV_STATUS_CONFIG = 3,
  OV_STATUS_UNKNOWN_ID = 4,
  OV_STATUS_RUN = 5,
  OV_STATUS_IO = 6,
  OV_STATUS_PANIC = 7,
} OvStatus;

// Run configuration handle.
typedef struct OvConfig OvConfig;

// Finished run handle.
typedef struct OvRunLog OvRunLog;

// Summary metrics of a run; fields that do not apply to the task are NaN.
typedef struct OvMetrics {
  double avg_regret;
  double log_loss;
  double avg_distance;
  double avg_deviation;
} OvMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty after a success.
// The pointer stays valid until the next call on this thread.
const char *ov_last_error(void);

// Library version as a static NUL-terminated string.
const char *ov_version(void);

// New configuration holding the defaults.
struct OvConfig *ov_config_default(void);

// Parses run-config text into a new handle stored in `*out`.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum OvStatus ov_config_parse(const char *text, struct OvConfig **out);

// Loads a run-config file into a new handle stored in `*out`.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum OvStatus ov_config_load(const char *path, struct OvConfig **out);

// Sets one key from its config-file value text, e.g. `"delay.comm_ms"`,
// `"300"`. Strings need quotes: `"\"formation-driving\""`. The handle is
// unchanged on failure.
//
// # Safety
// `cfg` must come from this library; `key` and `value` must be
// NUL-terminated strings.
enum OvStatus ov_config_set(struct OvConfig *cfg, const char *key, const char *value);

// Seed of the noise realization.
//
// # Safety
// `cfg` must come from this library.
enum OvStatus ov_config_set_seed(struct OvConfig *cfg, uint64_t seed);

// Config-file text of the handle; release with [`ov_string_free`].
// Returns NULL if `cfg` is NULL.
//
// # Safety
// `cfg` must come from this library.
char *ov_config_serialize(const struct OvConfig *cfg);

// # Safety
// `s` must come from this library or be NULL.
void ov_string_free(char *s);

// # Safety
// `cfg` must come from this library or be NULL, and not be used again.
void ov_config_free(struct OvConfig *cfg);

// Runs the configured simulation; the log goes to `*out`.
//
// # Safety
// `cfg` must come from this library and `out` be a valid pointer.
enum OvStatus ov_run(const struct OvConfig *cfg, struct OvRunLog **out);

// # Safety
// `log` must come from this library and `out` be a valid pointer.
enum OvStatus ov_runlog_metrics(const struct OvRunLog *log, struct OvMetrics *out);

// Number of simulated ticks, 0 for NULL.
//
// # Safety
// `log` must come from this library or be NULL.
uintptr_t ov_runlog_ticks(const struct OvRunLog *log);

// Fleet state dimension, 0 for NULL.
//
// # Safety
// `log` must come from this library or be NULL.
uintptr_t ov_runlog_state_dim(const struct OvRunLog *log);

// Number of times an agent read data it could not have had.
//
// # Safety
// `log` must come from this library or be NULL.
uint64_t ov_runlog_causality_violations(const struct OvRunLog *log);

// Copies the true fleet state at `tick` into `buf`, which holds `len`
// doubles and must fit [`ov_runlog_state_dim`] of them.
//
// # Safety
// `log` must come from this library and `buf` point to `len` doubles.
enum OvStatus ov_runlog_state(const struct OvRunLog *log,
                              uint64_t tick,
                              double *buf,
                              uintptr_t len);

// Writes the binary run log to `path`.
//
// # Safety
// `log` must come from this library and `path` be a NUL-terminated string.
enum OvStatus ov_runlog_write(const struct OvRunLog *log, const char *path);

// # Safety
// `log` must come from this library or be NULL, and not be used again.
void ov_runlog_free(struct OvRunLog *log);

// Solves the discrete algebraic Riccati equation for `A` (n×n), `B`
// (n×m), `Q` (n×n), `R` (m×m), all row-major, and writes the gain
// `K` (m×n, row-major) with `u = −Kx`.
//
// # Safety
// Each pointer must reference the stated number of doubles.
enum OvStatus ov_dare(const double *a,
                      const double *b,
                      const double *q,
                      const double *r,
                      uintptr_t n,
                      uintptr_t m,
                      double *k_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ONEVISION_H */
