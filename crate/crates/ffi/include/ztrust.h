#ifndef ZTRUST_H
#define ZTRUST_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ZtStatus {
  ZT_STATUS_OK = 0,
  ZT_STATUS_NULL_POINTER = 1,
  ZT_STATUS_CONFIG = 2,
  ZT_STATUS_IO = 3,
  ZT_STATUS_FORMAT = 4,
  ZT_STATUS_ARGUMENT = 5,
  ZT_STATUS_SHAPE = 6,
  ZT_STATUS_INVALID_UTF8 = 7,
  ZT_STATUS_OUT_OF_RANGE = 8,
  ZT_STATUS_PANIC = 9,
} ZtStatus;

/**
 * The outcome of running a scenario: metrics, ledger and metadata.
 */
typedef struct ZtRun ZtRun;

/**
 * A parsed, validated scenario configuration.
 */
typedef struct ZtScenario ZtScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread; empty after a
 * successful call. The pointer stays valid until the next call on this
 * thread.
 */
const char *zt_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *zt_version(void);

/**
 * Parses a TOML scenario.
 *
 * # Safety
 * `toml` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ZtStatus zt_scenario_from_toml(const char *toml, struct ZtScenario **out);

/**
 * Reads and parses a TOML scenario file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum ZtStatus zt_scenario_from_file(const char *path, struct ZtScenario **out);

/**
 * Replaces the master seed.
 *
 * # Safety
 * `scenario` must be a live handle from a `zt_scenario_*` constructor.
 */
enum ZtStatus zt_scenario_set_seed(struct ZtScenario *scenario, uint64_t seed);

/**
 * The scenario as TOML with every default written out.
 *
 * # Safety
 * `scenario` must be a live handle; the result is freed with
 * [`zt_string_free`].
 */
char *zt_scenario_to_toml(const struct ZtScenario *scenario);

/**
 * # Safety
 * `scenario` must be null or a handle not yet freed.
 */
void zt_scenario_free(struct ZtScenario *scenario);

/**
 * Runs every round of `scenario`.
 *
 * # Safety
 * `scenario` must be a live handle and `out` a valid pointer.
 */
enum ZtStatus zt_run(const struct ZtScenario *scenario, struct ZtRun **out);

/**
 * # Safety
 * `run` must be null or a handle not yet freed.
 */
void zt_run_free(struct ZtRun *run);

/**
 * Number of completed rounds; 0 for a null handle.
 *
 * # Safety
 * `run` must be null or a live handle.
 */
uint64_t zt_run_rounds(const struct ZtRun *run);

/**
 * Held-out accuracy and simulated delay of round `round`.
 *
 * # Safety
 * `run` must be a live handle; `accuracy` and `delay_s` valid pointers.
 */
enum ZtStatus zt_run_round(const struct ZtRun *run,
                           uint64_t round,
                           double *accuracy,
                           double *delay_s,
                           bool *degenerate);

/**
 * Trust of `device` after round `round`.
 *
 * # Safety
 * `run` must be a live handle and `trust` a valid pointer.
 */
enum ZtStatus zt_run_trust(const struct ZtRun *run, uint64_t round, uint32_t device, double *trust);

/**
 * Run-level summary: final accuracy, mean delay and oscillation.
 *
 * # Safety
 * `run` must be a live handle; the outputs valid pointers.
 */
enum ZtStatus zt_run_summary(const struct ZtRun *run,
                             double *final_accuracy,
                             double *mean_delay_s,
                             double *oscillation_out);

/**
 * The metrics CSV. Free with [`zt_string_free`].
 *
 * # Safety
 * `run` must be a live handle.
 */
char *zt_run_metrics_csv(const struct ZtRun *run);

/**
 * The ledger export (JSON lines). Free with [`zt_string_free`].
 *
 * # Safety
 * `run` must be a live handle.
 */
char *zt_run_ledger_export(const struct ZtRun *run);

/**
 * Writes metrics.csv, ledger.export and metadata.toml into `dir`.
 *
 * # Safety
 * `run` must be a live handle and `dir` a NUL-terminated string.
 */
enum ZtStatus zt_run_write_artifacts(const struct ZtRun *run, const char *dir);

/**
 * Checks an exported ledger. On success `first_bad_index` is -1 for a valid
 * chain, otherwise the index of the first invalid block.
 *
 * # Safety
 * `export` must be a NUL-terminated string and `first_bad_index` valid.
 */
enum ZtStatus zt_ledger_validate(const char *export_, int64_t *first_bad_index);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must be null or a pointer returned by a `zt_*` function documented as
 * caller-owned, not yet freed.
 */
void zt_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ZTRUST_H */
