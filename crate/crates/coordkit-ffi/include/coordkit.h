#ifndef COORDKIT_H
#define COORDKIT_H

/* Generated by cbindgen from the coordkit-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible call.
typedef enum CkStatus {
  // Success.
  CK_OK = 0,
  // A pointer argument was null or not valid UTF-8.
  CK_INVALID_ARGUMENT = 1,
  // The scenario could not be loaded (unknown name, schema or parse
  // error, infeasible initial state).
  CK_SCENARIO_ERROR = 2,
  // The rank test declared the coordination task infeasible.
  CK_INFEASIBLE = 3,
  // The simulation aborted (infeasible system or no admissible
  // virtual input at some time).
  CK_RUNTIME_ERROR = 4,
  // Writing an output file failed.
  CK_IO_ERROR = 5,
} CkStatus;

// An opaque, validated scenario.
typedef struct CkScenario CkScenario;

// Feasibility verdict with the ranks behind it.
typedef struct CkFeasibility {
  // 1 when rank(Omega) = rank([Omega | T]).
  int feasible;
  size_t rank_omega;
  size_t rank_augmented;
  // Null-space dimension (count of virtual inputs).
  size_t kappa;
} CkFeasibility;

// Summary statistics of a finished run.
typedef struct CkRunStats {
  size_t samples;
  // Constraint-row samples above the tolerance.
  size_t violations;
  size_t cone_failures;
  double max_eq_residual;
  // 1 when the run finished with no violations.
  int clean;
} CkRunStats;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the most recent failure on this thread. The pointer stays
// valid until the next failing call on the same thread.
const char *ck_last_error(void);

// Library version as a static string.
const char *ck_version(void);

// Newline-separated builtin scenario names; free with `ck_string_free`.
char *ck_builtin_scenarios(void);

// Free a string returned by this library.
//
// # Safety
// `s` must be a pointer previously returned by `ck_builtin_scenarios`
// (or null), not yet freed.
void ck_string_free(char *s);

// Load a builtin scenario by name, or a scenario JSON file by path.
//
// # Safety
// `name_or_path` must be a valid NUL-terminated string; `out` must be a
// valid, writable pointer. On success `*out` owns the scenario and must
// be released with `ck_scenario_free`.
enum CkStatus ck_scenario_load(const char *name_or_path, struct CkScenario **out);

// Parse and validate a scenario from JSON text.
//
// # Safety
// As [`ck_scenario_load`].
enum CkStatus ck_scenario_load_json(const char *json, struct CkScenario **out);

// Release a scenario handle.
//
// # Safety
// `scenario` must come from `ck_scenario_load`/`ck_scenario_load_json`
// and not have been freed already; null is ignored.
void ck_scenario_free(struct CkScenario *scenario);

// Decide coordination feasibility at the scenario's initial state and
// report the ranks and null-space dimension.
//
// # Safety
// `scenario` must be a live handle; `out` must be valid and writable.
enum CkStatus ck_check(const struct CkScenario *scenario, struct CkFeasibility *out);

// Simulate a scenario; optionally write the trajectory CSV and report
// JSON (pass null paths to skip). `tolerance` is the monitor's violation
// threshold. Statistics land in `out` even when the run aborts early.
//
// # Safety
// `scenario` must be a live handle; `csv_path`/`report_path` must be
// null or valid NUL-terminated paths; `out` must be valid and writable.
enum CkStatus ck_run(const struct CkScenario *scenario,
                     const char *csv_path,
                     const char *report_path,
                     double tolerance,
                     struct CkRunStats *out);

// Number of samples a run of this scenario will produce.
//
// # Safety
// `scenario` must be a live handle.
size_t ck_scenario_sample_count(const struct CkScenario *scenario);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* COORDKIT_H */
