#ifndef MRL_H
#define MRL_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

// Outcome of an `mrl_*` call.
typedef enum MrlStatus {
  MRL_STATUS_OK = 0,
  MRL_STATUS_NULL_POINTER = 1,
  MRL_STATUS_INVALID_ARGUMENT = 2,
  MRL_STATUS_CONFIG = 3,
  MRL_STATUS_DOMAIN = 4,
  MRL_STATUS_UNSUPPORTED = 5,
  MRL_STATUS_IO = 6,
  // Another library error; see the last error message.
  MRL_STATUS_FAILED = 7,
  // A panic was caught at the boundary.
  MRL_STATUS_INTERNAL = 8,
} MrlStatus;

// Suite selector for `mrl_run_suite`.
typedef enum MrlSuite {
  MRL_SUITE_KERNEL = 0,
  MRL_SUITE_HORMANDER = 1,
  MRL_SUITE_SOLVER = 2,
  MRL_SUITE_OPERATORS = 3,
  MRL_SUITE_MAXREG = 4,
  MRL_SUITE_MOMENT_SOBOLEV = 5,
  MRL_SUITE_ALL = 6,
} MrlSuite;

// Opaque experiment configuration.
typedef struct MrlConfig MrlConfig;

// Opaque list of verification reports.
typedef struct MrlReports MrlReports;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or NULL. The pointer stays
// valid until the next failing call on the same thread.
const char *mrl_last_error_message(void);

// Library version as a static NUL-terminated string.
const char *mrl_version(void);

// Releases a string returned by this library.
//
// # Safety
// `s` must be NULL or a pointer returned by an `mrl_*` function that
// transfers string ownership, not yet freed.
void mrl_string_free(char *s);

// Parses and validates a TOML configuration.
//
// # Safety
// `text` must be a NUL-terminated string; `out` a valid pointer.
enum MrlStatus mrl_config_from_toml(const char *text, struct MrlConfig **out);

// Loads and validates a TOML configuration file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` a valid pointer.
enum MrlStatus mrl_config_load(const char *path, struct MrlConfig **out);

// # Safety
// `cfg` must be NULL or a handle from `mrl_config_*`, not yet freed.
void mrl_config_free(struct MrlConfig *cfg);

// Replaces the master seed.
//
// # Safety
// `cfg` must be a live handle.
enum MrlStatus mrl_config_set_seed(struct MrlConfig *cfg, uint64_t seed);

// Hex SHA-256 of the canonical serialization; free with `mrl_string_free`.
//
// # Safety
// `cfg` must be a live handle; `out` a valid pointer.
enum MrlStatus mrl_config_hash(const struct MrlConfig *cfg, char **out);

// Runs one suite and returns its reports.
//
// # Safety
// `cfg` must be a live handle; `out` a valid pointer.
enum MrlStatus mrl_run_suite(const struct MrlConfig *cfg,
                             enum MrlSuite suite,
                             struct MrlReports **out);

// # Safety
// `reports` must be NULL or a handle from `mrl_run_suite`, not yet freed.
void mrl_reports_free(struct MrlReports *reports);

// Number of reports; 0 for NULL.
//
// # Safety
// `reports` must be NULL or a live handle.
uintptr_t mrl_reports_len(const struct MrlReports *reports);

// Observed value and pass flag of report `index`.
//
// # Safety
// `reports` must be a live handle; `observed` and `passed` valid pointers.
enum MrlStatus mrl_report_result(const struct MrlReports *reports,
                                 uintptr_t index,
                                 double *observed,
                                 bool *passed);

// Name of report `index`; free with `mrl_string_free`.
//
// # Safety
// `reports` must be a live handle; `out` a valid pointer.
enum MrlStatus mrl_report_name(const struct MrlReports *reports, uintptr_t index, char **out);

// All reports as CSV (the CLI's `reports.csv`); free with `mrl_string_free`.
//
// # Safety
// `reports` must be a live handle; `out` a valid pointer.
enum MrlStatus mrl_reports_csv(const struct MrlReports *reports, char **out);

// D^γ p for the Gaussian kernel with covariance matrix `a` (row-major,
// dim × dim, symmetric positive definite) at point `x` (dim entries).
// `gamma` holds dim derivative orders; NULL means no derivative.
//
// # Safety
// `a` must point to dim² doubles, `x` to dim doubles, `gamma` to NULL or
// dim `uint32_t`s, and `out` to a double.
enum MrlStatus mrl_kernel_derivative(uintptr_t dim,
                                     const double *a,
                                     const double *x,
                                     const uint32_t *gamma,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MRL_H */
