#ifndef DRAYAGE_H
#define DRAYAGE_H

#pragma once

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum DrayageStatus {
  DRAYAGE_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  DRAYAGE_STATUS_NULL_POINTER = 1,
  /**
   * A string argument was not valid UTF-8.
   */
  DRAYAGE_STATUS_INVALID_UTF8 = 2,
  /**
   * Malformed JSON, inconsistent dimensions or an invalid instance.
   */
  DRAYAGE_STATUS_INVALID_INPUT = 3,
  /**
   * A solver failed (infeasible or unbounded program, undefined policy).
   */
  DRAYAGE_STATUS_SOLVER_FAILURE = 4,
  /**
   * The requested state is outside the state grid.
   */
  DRAYAGE_STATUS_OUT_OF_RANGE = 5,
  /**
   * The library panicked; the handle arguments should be considered lost.
   */
  DRAYAGE_STATUS_PANIC = 6,
} DrayageStatus;

typedef struct DrayageInstance DrayageInstance;

typedef struct DrayagePolicy DrayagePolicy;

typedef struct DrayageScenario DrayageScenario;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer stays
 * valid until the next call into the library from the same thread.
 */
const char *drayage_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *drayage_version(void);

/**
 * Parses and validates an instance.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
enum DrayageStatus drayage_instance_from_json(const char *json, struct DrayageInstance **out);

/**
 * # Safety
 * `inst` must be null or a handle from [`drayage_instance_from_json`] not yet freed.
 */
void drayage_instance_free(struct DrayageInstance *inst);

/**
 * Writes the entry, exit, source and period counts.
 *
 * # Safety
 * `inst` must be a live handle; the output pointers must be valid.
 */
enum DrayageStatus drayage_instance_dims(const struct DrayageInstance *inst,
                                         size_t *n_entries,
                                         size_t *n_exits,
                                         size_t *n_sources,
                                         size_t *horizon);

/**
 * Number of grid states.
 *
 * # Safety
 * `inst` must be a live handle and `out` a valid pointer.
 */
enum DrayageStatus drayage_state_space_size(const struct DrayageInstance *inst, uint64_t *out);

/**
 * Parses a scenario; its horizon must match `inst`.
 *
 * # Safety
 * `inst` must be a live handle, `json` NUL-terminated and `out` valid.
 */
enum DrayageStatus drayage_scenario_from_json(const struct DrayageInstance *inst,
                                              const char *json,
                                              struct DrayageScenario **out);

/**
 * # Safety
 * `sc` must be null or a handle from [`drayage_scenario_from_json`] not yet freed.
 */
void drayage_scenario_free(struct DrayageScenario *sc);

/**
 * Total cost (reservation cost minus the best first-period value) of `plan`
 * on one scenario.
 *
 * # Safety
 * Handles must be live; `plan` must point to `plan_len` doubles; `out` valid.
 */
enum DrayageStatus drayage_total_cost(const struct DrayageInstance *inst,
                                      const struct DrayageScenario *sc,
                                      const double *plan,
                                      size_t plan_len,
                                      double *out);

/**
 * Backward induction on one scenario for a fixed plan.
 *
 * # Safety
 * Handles must be live; `plan` must point to `plan_len` doubles; `out` valid.
 */
enum DrayageStatus drayage_solve_scenario(const struct DrayageInstance *inst,
                                          const struct DrayageScenario *sc,
                                          const double *plan,
                                          size_t plan_len,
                                          struct DrayagePolicy **out);

/**
 * # Safety
 * `p` must be null or a handle from [`drayage_solve_scenario`] not yet freed.
 */
void drayage_policy_free(struct DrayagePolicy *p);

/**
 * Value of a state at 0-based period `t` (`t == horizon` is terminal).
 *
 * # Safety
 * `inst` and `policy` must be live and belong together; state arrays must
 * hold the stated counts; `out` valid.
 */
enum DrayageStatus drayage_policy_value(const struct DrayageInstance *inst,
                                        const struct DrayagePolicy *policy,
                                        size_t t,
                                        const int64_t *entry,
                                        size_t n_entry,
                                        const int64_t *exit,
                                        size_t n_exit,
                                        double *out);

/**
 * Optimal move volume at 0-based period `t < horizon`. Returns
 * `DRAYAGE_STATUS_SOLVER_FAILURE` where no action is feasible.
 *
 * # Safety
 * As [`drayage_policy_value`].
 */
enum DrayageStatus drayage_policy_action(const struct DrayageInstance *inst,
                                         const struct DrayagePolicy *policy,
                                         size_t t,
                                         const int64_t *entry,
                                         size_t n_entry,
                                         const int64_t *exit,
                                         size_t n_exit,
                                         int64_t *out);

/**
 * Capacity search on one scenario from `start`. Writes the best plan into
 * `best` (same layout and length as `start`) and its total cost into
 * `total_cost`. `restarts` extra starts are drawn from `seed`.
 *
 * # Safety
 * Handles must be live; `start` and `best` must each hold `len` doubles;
 * `total_cost` valid.
 */
enum DrayageStatus drayage_optimize_capacity(const struct DrayageInstance *inst,
                                             const struct DrayageScenario *sc,
                                             const double *start,
                                             size_t len,
                                             size_t restarts,
                                             uint64_t seed,
                                             double *best,
                                             double *total_cost);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DRAYAGE_H */
