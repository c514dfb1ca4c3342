#include "mfgweak.h"

#include "mfgweak/errors.hpp"
#include "mfgweak/scenario.hpp"
#include "mfgweak/version.hpp"

#include <cmath>
#include <memory>
#include <new>
#include <string>
#include <utility>

struct mfgw_run {
    std::unique_ptr<mfgw::ScenarioRun> impl;
    std::string last_error;
    std::string manifest;
};

namespace {

thread_local std::string g_create_error;

mfgw_status status_of(mfgw::ErrorKind kind) {
    using K = mfgw::ErrorKind;
    switch (kind) {
    case K::Config:
        return MFGW_ERR_CONFIG;
    case K::NonConvergence:
        return MFGW_ERR_NO_CONVERGENCE;
    case K::NonFinite:
    case K::SingularFlow:
    case K::RegressionSingular:
    case K::EvaluatorFailure:
        return MFGW_ERR_NUMERICAL;
    case K::ShapeMismatch:
    case K::ModeUnsupported:
    case K::DepthUnsupported:
    case K::InsufficientNodes:
    case K::BandwidthInvalid:
        return MFGW_ERR_INVALID_ARGUMENT;
    case K::MissingArtifacts:
    case K::Io:
        return MFGW_ERR_IO;
    case K::Internal:
        return MFGW_ERR_INTERNAL;
    }
    return MFGW_ERR_INTERNAL;
}

template <class Fn>
mfgw_status guarded(mfgw_run* run, Fn&& fn) {
    if (!run || !run->impl) return MFGW_ERR_INVALID_ARGUMENT;
    run->last_error.clear();
    try {
        fn();
        return MFGW_OK;
    } catch (const mfgw::Error& e) {
        run->last_error = e.what();
        return status_of(e.kind());
    } catch (const std::exception& e) {
        run->last_error = e.what();
        return MFGW_ERR_INTERNAL;
    } catch (...) {
        run->last_error = "unknown failure";
        return MFGW_ERR_INTERNAL;
    }
}

mfgw_status create_common(mfgw_run** out, const char* source, bool is_path) {
    if (out) *out = nullptr;
    g_create_error.clear();
    if (!out || !source) {
        g_create_error = "null argument";
        return MFGW_ERR_INVALID_ARGUMENT;
    }
    try {
        mfgw::ScenarioConfig cfg =
            is_path ? mfgw::parse_scenario_file(source)
                    : mfgw::parse_scenario(source, "<string>");
        auto run = std::make_unique<mfgw_run>();
        run->impl = std::make_unique<mfgw::ScenarioRun>(std::move(cfg));
        *out = run.release();
        return MFGW_OK;
    } catch (const mfgw::Error& e) {
        g_create_error = e.what();
        return status_of(e.kind());
    } catch (const std::bad_alloc&) {
        g_create_error = "out of memory";
        return MFGW_ERR_INTERNAL;
    } catch (const std::exception& e) {
        g_create_error = e.what();
        return MFGW_ERR_INTERNAL;
    }
}

} // namespace

extern "C" {

mfgw_status mfgw_run_create(const char* config_path, mfgw_run** out) {
    return create_common(out, config_path, true);
}

mfgw_status mfgw_run_create_from_string(const char* config_text, mfgw_run** out) {
    return create_common(out, config_text, false);
}

const char* mfgw_last_create_error(void) { return g_create_error.c_str(); }

void mfgw_run_destroy(mfgw_run* run) { delete run; }

mfgw_status mfgw_run_set_seed(mfgw_run* run, uint64_t seed) {
    return guarded(run, [&] { run->impl->set_seed(seed); });
}

mfgw_status mfgw_run_set_threads(mfgw_run* run, int threads) {
    return guarded(run, [&] { run->impl->set_threads(threads); });
}

mfgw_status mfgw_run_set_output_dir(mfgw_run* run, const char* dir) {
    if (!dir) return MFGW_ERR_INVALID_ARGUMENT;
    return guarded(run, [&] { run->impl->set_output_dir(dir); });
}

mfgw_status mfgw_run_execute(mfgw_run* run, const char* stage) {
    if (!stage) return MFGW_ERR_INVALID_ARGUMENT;
    return guarded(run, [&] { run->impl->execute(stage); });
}

mfgw_status mfgw_run_summary(const mfgw_run* run, const char* field, double* out) {
    if (!run || !run->impl || !field || !out) return MFGW_ERR_INVALID_ARGUMENT;
    double v = run->impl->summary(field);
    if (std::isnan(v)) return MFGW_ERR_INVALID_ARGUMENT;
    *out = v;
    return MFGW_OK;
}

const char* mfgw_run_last_error(const mfgw_run* run) {
    return run ? run->last_error.c_str() : "";
}

const char* mfgw_run_manifest_path(mfgw_run* run) {
    if (!run || !run->impl) return "";
    run->manifest = run->impl->manifest_path();
    return run->manifest.c_str();
}

mfgw_status mfgw_emit_plots(const char* run_dir) {
    if (!run_dir) return MFGW_ERR_INVALID_ARGUMENT;
    try {
        mfgw::emit_plots(run_dir);
        return MFGW_OK;
    } catch (const mfgw::Error& e) {
        g_create_error = e.what();
        return status_of(e.kind());
    } catch (const std::exception& e) {
        g_create_error = e.what();
        return MFGW_ERR_INTERNAL;
    }
}

const char* mfgw_version(void) { return mfgw::kVersion; }

int mfgw_status_exit_code(mfgw_status status) {
    switch (status) {
    case MFGW_OK:
        return 0;
    case MFGW_ERR_CONFIG:
    case MFGW_ERR_INVALID_ARGUMENT:
    case MFGW_ERR_IO:
        return 1;
    case MFGW_ERR_NO_CONVERGENCE:
        return 2;
    case MFGW_ERR_NUMERICAL:
    case MFGW_ERR_INTERNAL:
        return 3;
    }
    return 3;
}

} // extern "C"
