#ifndef IMAB_H
#define IMAB_H

/* Generated by cbindgen from imab-ffi; edits belong in src/lib.rs. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result codes. Anything but `Ok` leaves a message for
 * `imab_last_error_message`.
 */
typedef enum ImabStatus {
  IMAB_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  IMAB_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  IMAB_STATUS_INVALID_UTF8 = 2,
  /**
   * A JSON document failed to parse or violated its schema.
   */
  IMAB_STATUS_PARSE_ERROR = 3,
  /**
   * Inputs were structurally valid but semantically rejected
   * (dimension mismatches, out-of-range values, bad depth, ...).
   */
  IMAB_STATUS_INVALID_INPUT = 4,
  /**
   * The optimizer reported a failure it could not recover from.
   */
  IMAB_STATUS_OPTIMIZER_FAILURE = 5,
  /**
   * Serialization or other I/O failed.
   */
  IMAB_STATUS_IO_ERROR = 6,
  /**
   * A panic was caught at the boundary; this is a bug in the library.
   */
  IMAB_STATUS_INTERNAL_ERROR = 7,
} ImabStatus;

/**
 * An episode plus its problem dimensions, ready to fit.
 */
typedef struct ImabEpisode ImabEpisode;

/**
 * A finished fit: recovered parameters, bounds, certificate, diagnostics.
 */
typedef struct ImabReport ImabReport;

#ifdef __cplusplus
extern "C" {
#endif  // __cplusplus

/**
 * Library version as a static NUL-terminated string. Never freed.
 */
const char *imab_version(void);

/**
 * Message for the most recent failure on this thread, or null if the last
 * call succeeded. The pointer is valid until the next library call on the
 * same thread; copy it if you need it longer.
 */
const char *imab_last_error_message(void);

/**
 * Parses an episode document (the same JSON the CLI consumes) and returns
 * a handle through `out`.
 *
 * # Safety
 * `json` must be a NUL-terminated string. `out` must be a valid pointer;
 * on `Ok` it receives a handle that must be released with
 * `imab_episode_free`.
 */
ImabStatus imab_episode_from_json(const char *json, ImabEpisode **out);

/**
 * Releases an episode handle. Null is a no-op.
 *
 * # Safety
 * `episode` must be a handle from `imab_episode_from_json` that has not
 * already been freed.
 */
void imab_episode_free(ImabEpisode *episode);

/**
 * Number of trials, or 0 if `episode` is null.
 */
size_t imab_episode_trials(const ImabEpisode *episode);

/**
 * Number of arms, or 0 if `episode` is null.
 */
size_t imab_episode_arms(const ImabEpisode *episode);

/**
 * Number of reward subsignals, or 0 if `episode` is null.
 */
size_t imab_episode_subsignals(const ImabEpisode *episode);

/**
 * Default fit options as a JSON document the caller may edit and pass to
 * `imab_fit`. Free with `imab_string_free`. Returns null only if
 * serialization fails (it cannot).
 */
char *imab_fit_options_default_json(void);

/**
 * Fits one episode. `options_json` selects the method and all knobs; pass
 * null for the defaults (sequential pipeline, full depth). The options
 * document must be complete — start from
 * `imab_fit_options_default_json` and edit fields.
 *
 * # Safety
 * `episode` must be a live handle. `options_json`, if non-null, must be a
 * NUL-terminated string. `out` must be a valid pointer; on `Ok` it
 * receives a handle that must be released with `imab_report_free`.
 */
ImabStatus imab_fit(const ImabEpisode *episode, const char *options_json, ImabReport **out);

/**
 * Computes only the relaxed lower bound at the given history depth
 * (0 means full depth) with default solver settings, writing it to
 * `out_j_lb`. The bound is only valid for the unrestricted model class at
 * full depth.
 *
 * # Safety
 * `episode` must be a live handle and `out_j_lb` a valid pointer.
 */
ImabStatus imab_lower_bound(const ImabEpisode *episode, size_t depth, double *out_j_lb);

/**
 * Releases a report handle. Null is a no-op.
 *
 * # Safety
 * `report` must be a handle from `imab_fit` that has not already been
 * freed.
 */
void imab_report_free(ImabReport *report);

/**
 * Serializes the full report (parameters, bounds, certificate,
 * diagnostics, resolved options) to JSON. Free the string with
 * `imab_string_free`.
 *
 * # Safety
 * `report` must be a live handle and `out` a valid pointer.
 */
ImabStatus imab_report_to_json(const ImabReport *report, char **out);

/**
 * Achieved negative log-likelihood, or NaN if `report` is null.
 */
double imab_report_j_ub(const ImabReport *report);

/**
 * Relaxed lower bound, or NaN if absent (direct method) or `report` is
 * null.
 */
double imab_report_j_lb(const ImabReport *report);

/**
 * Optimality gap `j_ub - j_lb`, or NaN if no bound exists or `report` is
 * null.
 */
double imab_report_gap(const ImabReport *report);

/**
 * 1 if the fit carries a global-optimality certificate, 0 if not, -1 if
 * `report` is null.
 */
int imab_report_certified(const ImabReport *report);

/**
 * Writes the recovered parameter dimensions: rows (subsignals) and
 * columns (arms). Either out-pointer may be null to skip it.
 *
 * # Safety
 * `report` must be a live handle; non-null out-pointers must be valid.
 */
ImabStatus imab_report_dims(const ImabReport *report, size_t *out_subsignals, size_t *out_arms);

/**
 * Copies the recovered parameters into caller buffers, row-major with one
 * row per subsignal and one column per arm (`len` doubles as an overrun
 * check and must equal subsignals * arms). Either matrix pointer may be
 * null to skip that matrix.
 *
 * # Safety
 * `report` must be a live handle; non-null buffers must hold `len`
 * doubles.
 */
ImabStatus imab_report_params(const ImabReport *report, double *alpha, double *beta, size_t len);

/**
 * Releases a string returned by this library. Null is a no-op.
 *
 * # Safety
 * `s` must have come from this library and not already be freed.
 */
void imab_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  // IMAB_H
