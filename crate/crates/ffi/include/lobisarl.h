#ifndef LOBISARL_H
#define LOBISARL_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/*
 Grid actions.
 */
typedef enum LbsAction {
  LBS_ACTION_UP = 0,
  LBS_ACTION_RIGHT = 1,
  LBS_ACTION_DOWN = 2,
  LBS_ACTION_LEFT = 3,
  LBS_ACTION_STAY = 4,
} LbsAction;

/*
 Agent identifiers, in the canonical reporting order.
 */
typedef enum LbsAgent {
  LBS_AGENT_RANDOM = 0,
  LBS_AGENT_UNSAFE = 1,
  LBS_AGENT_LINEAR = 2,
  LBS_AGENT_INSTANTANEOUS = 3,
  LBS_AGENT_LOBISARL = 4,
} LbsAgent;

/*
 Result codes of every fallible call.
 */
typedef enum LbsStatus {
  LBS_STATUS_OK = 0,
  LBS_STATUS_NULL_POINTER = 1,
  LBS_STATUS_INVALID_ARGUMENT = 2,
  LBS_STATUS_CONFIG = 3,
  LBS_STATUS_GENERATION = 4,
  LBS_STATUS_NUMERICAL = 5,
  LBS_STATUS_IO = 6,
  LBS_STATUS_ABORTED = 7,
  LBS_STATUS_PANIC = 8,
} LbsStatus;

/*
 Experiment configuration handle.
 */
typedef struct LbsConfig LbsConfig;

/*
 Finished experiment handle: records, normalization and summary.
 */
typedef struct LbsExperiment LbsExperiment;

/*
 Generated environment handle.
 */
typedef struct LbsWorld LbsWorld;

/*
 One evaluation-episode record. `agent` holds an [`LbsAgent`] value.
 */
typedef struct LbsRecord {
  uint64_t seed;
  uint32_t agent;
  uint64_t episode;
  double raw_return;
  double normalized_return;
  uint64_t unsafe_actions;
  uint64_t fallback_events;
  double min_margin;
  uint64_t wall_time_ms;
} LbsRecord;

/*
 Per-agent aggregate over the evaluation episodes.
 */
typedef struct LbsSummary {
  uint64_t episodes;
  double return_mean;
  double return_std;
  double unsafe_mean;
  double unsafe_std;
  uint64_t fallback_total;
  uint64_t seeds_with_violations;
} LbsSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Copies the last error message of this thread into `buf` (NUL-terminated,
 truncated to `len - 1` bytes) and returns the full message length.

 # Safety
 `buf` must be null or point to `len` writable bytes.
 */
size_t lbs_last_error(char *buf, size_t len);

/*
 Logistic link.
 */
double lbs_mu(double x);

/*
 Inverse logistic link for `p` in (0, 1).

 # Safety
 `out_value` must be null or valid for writes.
 */
enum LbsStatus lbs_mu_inverse(double p, double *out_value);

/*
 Per-step threshold `mu^{-1}((1 - delta)^{1/horizon})`.

 # Safety
 `out_value` must be null or valid for writes.
 */
enum LbsStatus lbs_threshold_z(double delta, size_t horizon, double *out_value);

/*
 Default configuration.

 # Safety
 `out_config` must be null or valid for writes.
 */
enum LbsStatus lbs_config_new(struct LbsConfig **out_config);

/*
 Configuration parsed from TOML text; missing keys take their defaults.

 # Safety
 `toml` must be null or a NUL-terminated string; `out_config` must be null or valid for writes.
 */
enum LbsStatus lbs_config_from_toml(const char *toml, struct LbsConfig **out_config);

/*
 Releases a configuration. Null is ignored.

 # Safety
 `config` must be null or a handle from this library not yet freed.
 */
void lbs_config_free(struct LbsConfig *config);

/*
 Generates the world of `seed` under `config`.

 # Safety
 `config` must be a live handle; `out_world` must be null or valid for writes.
 */
enum LbsStatus lbs_world_generate(const struct LbsConfig *config,
                                  uint64_t seed,
                                  struct LbsWorld **out_world);

/*
 Releases a world. Null is ignored.

 # Safety
 `world` must be null or a handle from this library not yet freed.
 */
void lbs_world_free(struct LbsWorld *world);

/*
 Grid width, height and horizon.

 # Safety
 `world` must be a live handle; the out pointers must be null or valid for writes.
 */
enum LbsStatus lbs_world_shape(const struct LbsWorld *world,
                               size_t *out_width,
                               size_t *out_height,
                               size_t *out_horizon);

/*
 True safety function `f*(s, a)` at cell `(x, y)`.

 # Safety
 `world` must be a live handle; `out_value` must be null or valid for writes.
 */
enum LbsStatus lbs_world_safety(const struct LbsWorld *world,
                                size_t x,
                                size_t y,
                                enum LbsAction action,
                                double *out_value);

/*
 Expected reward of `(s, a)` at cell `(x, y)`.

 # Safety
 `world` must be a live handle; `out_value` must be null or valid for writes.
 */
enum LbsStatus lbs_world_reward(const struct LbsWorld *world,
                                size_t x,
                                size_t y,
                                enum LbsAction action,
                                double *out_value);

/*
 Whether cell `(x, y)` is a wall.

 # Safety
 `world` must be a live handle; `out_wall` must be null or valid for writes.
 */
enum LbsStatus lbs_world_is_wall(const struct LbsWorld *world, size_t x, size_t y, bool *out_wall);

/*
 Runs every configured agent on seeds `[seed_start, seed_end)` with `jobs`
 worker threads and normalizes returns against the Unsafe agent.

 # Safety
 `config` must be a live handle; `out_experiment` must be null or valid for writes.
 */
enum LbsStatus lbs_experiment_run(const struct LbsConfig *config,
                                  uint64_t seed_start,
                                  uint64_t seed_end,
                                  size_t jobs,
                                  struct LbsExperiment **out_experiment);

/*
 Releases an experiment. Null is ignored.

 # Safety
 `experiment` must be null or a handle from this library not yet freed.
 */
void lbs_experiment_free(struct LbsExperiment *experiment);

/*
 Number of records, completed seeds and skipped seeds.

 # Safety
 `experiment` must be a live handle; the out pointers must be null or valid for writes.
 */
enum LbsStatus lbs_experiment_counts(const struct LbsExperiment *experiment,
                                     size_t *out_records,
                                     size_t *out_completed,
                                     size_t *out_skipped);

/*
 Record `index` in seed order.

 # Safety
 `experiment` must be a live handle; `out_record` must be null or valid for writes.
 */
enum LbsStatus lbs_experiment_record(const struct LbsExperiment *experiment,
                                     size_t index,
                                     struct LbsRecord *out_record);

/*
 Summary of `agent`; fails with `InvalidArgument` when the agent did not run.

 # Safety
 `experiment` must be a live handle; `out_summary` must be null or valid for writes.
 */
enum LbsStatus lbs_experiment_summary(const struct LbsExperiment *experiment,
                                      enum LbsAgent agent,
                                      struct LbsSummary *out_summary);

/*
 Writes records, summary and configuration files into directory `dir`.

 # Safety
 `experiment` must be a live handle; `dir` must be null or a NUL-terminated string.
 */
enum LbsStatus lbs_experiment_write(const struct LbsExperiment *experiment,
                                    const char *dir,
                                    bool plot);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LOBISARL_H */
