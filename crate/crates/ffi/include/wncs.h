#ifndef WNCS_H
#define WNCS_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum WncsStatus {
  WNCS_STATUS_OK = 0,
  WNCS_STATUS_NULL_POINTER = 1,
  WNCS_STATUS_INVALID_ARGUMENT = 2,
  WNCS_STATUS_CONFIG_ERROR = 3,
  WNCS_STATUS_ANALYSIS_ERROR = 4,
  WNCS_STATUS_SIMULATION_ERROR = 5,
  WNCS_STATUS_PANIC = 6,
} WncsStatus;

// Which matrix `F` is used to assemble `U`.
typedef enum WncsUForm {
  WNCS_U_FORM_STATIONARY_WEIGHTED = 0,
  WNCS_U_FORM_TIME_REVERSAL = 1,
} WncsUForm;

// Closed-loop mode of a simulation.
typedef enum WncsMode {
  WNCS_MODE_DUAL_BUFFER = 0,
  WNCS_MODE_SINGLE_BUFFER_BASELINE = 1,
} WncsMode;

// Parsed configuration file.
typedef struct WncsConfig WncsConfig;

// Stability certificate with its supporting matrices.
typedef struct WncsReport WncsReport;

// Headline numbers of a [`WncsReport`].
typedef struct WncsCertificate {
  size_t states_total;
  size_t states_transient;
  size_t states_recurrent;
  size_t states_s0;
  double max_r;
  double lambda_max_u;
  double lambda_max_u_time_reversal;
  double omega_prime;
  double omega;
  double omega_time_reversal;
  // `omega_prime < 1`.
  bool stable_loose;
  // `omega < 1`.
  bool stable_tight;
} WncsCertificate;

// Aggregate of a Monte-Carlo run.
typedef struct WncsSimSummary {
  size_t seeds;
  size_t failures;
  double mean_norm;
  double max_norm;
  double open_loop_fraction;
  // Fitted slope of `ln E[Ξ(n)]`; NaN when margins are absent or too few
  // cycles completed.
  double xi_decay_rate;
} WncsSimSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *wncs_version(void);

// Copies the last error message of this thread into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length excluding the NUL,
// so a caller can size the buffer; `buf` may be null to query only.
//
// # Safety
// `buf` must be null or valid for `len` bytes.
size_t wncs_last_error_message(char *buf, size_t len);

// Loads a configuration file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum WncsStatus wncs_config_load(const char *path, struct WncsConfig **out);

// Parses configuration text; relative paths inside resolve against
// `base_dir` (null for the current directory).
//
// # Safety
// `text` and non-null `base_dir` must be NUL-terminated; `out` writable.
enum WncsStatus wncs_config_parse(const char *text, const char *base_dir, struct WncsConfig **out);

// Releases a configuration. Null is ignored.
//
// # Safety
// `cfg` must come from this library and not be used afterwards.
void wncs_config_free(struct WncsConfig *cfg);

// Replaces the C-A drop probability of the configured network.
//
// # Safety
// `cfg` must be a live handle.
enum WncsStatus wncs_config_set_gamma_bar(struct WncsConfig *cfg, double gamma_bar);

// Builds the chain described by the configuration and certifies it.
//
// # Safety
// `cfg` must be a live handle; `out` writable.
enum WncsStatus wncs_analyze(const struct WncsConfig *cfg,
                             enum WncsUForm form,
                             struct WncsReport **out);

// Certifies a row-major `n × n` stochastic matrix with closed-loop states
// `s0[0..s0_len]`.
//
// # Safety
// `values` must hold `n * n` doubles, `s0` `s0_len` indices; `out` writable.
enum WncsStatus wncs_certify_matrix(const double *values,
                                    size_t n,
                                    const size_t *s0,
                                    size_t s0_len,
                                    double rho,
                                    double alpha,
                                    enum WncsUForm form,
                                    struct WncsReport **out);

// Fills `out` with the headline numbers of `report`.
//
// # Safety
// `report` must be a live handle; `out` writable.
enum WncsStatus wncs_report_certificate(const struct WncsReport *report,
                                        struct WncsCertificate *out);

// Full report as a newly allocated JSON string, released with
// [`wncs_string_free`]. Returns null on failure.
//
// # Safety
// `report` must be a live handle.
char *wncs_report_to_json(const struct WncsReport *report);

// Releases a report. Null is ignored.
//
// # Safety
// `report` must come from this library and not be used afterwards.
void wncs_report_free(struct WncsReport *report);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void wncs_string_free(char *s);

// Runs seeds `1..=seeds` of the configured simulation in `mode`.
//
// # Safety
// `cfg` must be a live handle; `out` writable.
enum WncsStatus wncs_simulate(const struct WncsConfig *cfg,
                              uint64_t seeds,
                              enum WncsMode mode,
                              struct WncsSimSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* WNCS_H */
