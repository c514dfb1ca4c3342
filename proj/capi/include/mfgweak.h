#ifndef MFGWEAK_H
#define MFGWEAK_H

/* C interface to the particle pipeline: build a run from a scenario file,
 * execute pipeline stages against it, and read headline numbers back.  All
 * functions are safe to call from C; a run handle must stay on one thread. */

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum mfgw_status {
    MFGW_OK = 0,
    MFGW_ERR_CONFIG = 1,           /* bad scenario file or option value */
    MFGW_ERR_NO_CONVERGENCE = 2,   /* an iteration hit its cap */
    MFGW_ERR_NUMERICAL = 3,        /* overflow, singular system, bad evaluator */
    MFGW_ERR_INVALID_ARGUMENT = 4, /* misuse of this interface */
    MFGW_ERR_IO = 5,               /* missing or unwritable files */
    MFGW_ERR_INTERNAL = 6
} mfgw_status;

typedef struct mfgw_run mfgw_run;

/* Parses the scenario and returns a fresh handle through *out (NULL on
 * failure; the parse error is then available via mfgw_last_create_error). */
mfgw_status mfgw_run_create(const char* config_path, mfgw_run** out);
mfgw_status mfgw_run_create_from_string(const char* config_text, mfgw_run** out);

/* Why the most recent create call on this thread failed ("" when it
 * succeeded).  The pointer stays valid until the next create call. */
const char* mfgw_last_create_error(void);

void mfgw_run_destroy(mfgw_run* run);

/* Overrides applied on top of the scenario file; call before executing. */
mfgw_status mfgw_run_set_seed(mfgw_run* run, uint64_t seed);
mfgw_status mfgw_run_set_threads(mfgw_run* run, int threads);
mfgw_status mfgw_run_set_output_dir(mfgw_run* run, const char* dir);

/* Stage is one of: simulate, solve-bsde, solve-mfg, diagnose,
 * verify-assumptions, emit-plots.  Stages pull in their prerequisites.
 * Artifacts and an updated manifest land in the output directory. */
mfgw_status mfgw_run_execute(mfgw_run* run, const char* stage);

/* Headline number produced by an executed stage ("y0_mean", "iterations",
 * "final_residual", "weak_cost", ...).  MFGW_ERR_INVALID_ARGUMENT when the
 * field does not exist (yet). */
mfgw_status mfgw_run_summary(const mfgw_run* run, const char* field, double* out);

/* Text of the last error raised through this handle ("" when none).  Valid
 * until the next call on the handle. */
const char* mfgw_run_last_error(const mfgw_run* run);

/* Absolute-or-relative path of the run's manifest file.  Valid until the next
 * call on the handle. */
const char* mfgw_run_manifest_path(mfgw_run* run);

/* Renders the svg set from a finished run folder (no handle needed). */
mfgw_status mfgw_emit_plots(const char* run_dir);

const char* mfgw_version(void);

/* Process exit-code convention: 0 ok; 1 configuration, arguments or io;
 * 2 non-convergence; 3 numerical trouble. */
int mfgw_status_exit_code(mfgw_status status);

#ifdef __cplusplus
}
#endif

#endif /* MFGWEAK_H */
