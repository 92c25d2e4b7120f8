#include <math.h>
#include <stdio.h>
#include "lobisarl.h"

#define CHECK(cond)                                                  \
    do {                                                             \
        if (!(cond)) {                                               \
            char msg[256];                                           \
            lbs_last_error(msg, sizeof msg);                         \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond, msg); \
            return 1;                                                \
        }                                                            \
    } while (0)

int main(void) {
    double z = 0.0;
    CHECK(lbs_threshold_z(0.05, 50, &z) == LBS_STATUS_OK);
    CHECK(fabs(z - 6.8819) < 1e-3);
    CHECK(lbs_threshold_z(1.5, 50, &z) == LBS_STATUS_INVALID_ARGUMENT);
    CHECK(lbs_last_error(NULL, 0) > 0);

    LbsConfig *cfg = NULL;
    CHECK(lbs_config_from_toml("num_envs = 1\nagents = [\"Unsafe\", \"LoBiSaRL\"]\ntraining_episodes = 2\n", &cfg) == LBS_STATUS_OK);

    LbsWorld *world = NULL;
    CHECK(lbs_world_generate(cfg, 0, &world) == LBS_STATUS_OK);
    size_t w = 0, h = 0, horizon = 0;
    CHECK(lbs_world_shape(world, &w, &h, &horizon) == LBS_STATUS_OK);
    CHECK(w == 20 && h == 20 && horizon == 50);
    double f = 0.0;
    CHECK(lbs_world_safety(world, 0, 0, LBS_ACTION_STAY, &f) == LBS_STATUS_OK);
    CHECK(f >= 10.0);
    CHECK(lbs_world_safety(world, 99, 0, LBS_ACTION_STAY, &f) == LBS_STATUS_INVALID_ARGUMENT);
    lbs_world_free(world);

    LbsExperiment *exp = NULL;
    CHECK(lbs_experiment_run(cfg, 0, 1, 1, &exp) == LBS_STATUS_OK);
    size_t records = 0, completed = 0, skipped = 0;
    CHECK(lbs_experiment_counts(exp, &records, &completed, &skipped) == LBS_STATUS_OK);
    CHECK(records == 2 && completed == 1 && skipped == 0);
    LbsSummary s;
    CHECK(lbs_experiment_summary(exp, LBS_AGENT_UNSAFE, &s) == LBS_STATUS_OK);
    CHECK(s.return_mean == 1.0);
    CHECK(lbs_experiment_summary(exp, LBS_AGENT_RANDOM, &s) == LBS_STATUS_INVALID_ARGUMENT);
    lbs_experiment_free(exp);
    lbs_config_free(cfg);

    CHECK(lbs_config_new(NULL) == LBS_STATUS_NULL_POINTER);
    puts("ok");
    return 0;
}
