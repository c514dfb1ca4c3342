// Command-line front end over the C interface: each subcommand drives one
// pipeline stage of a scenario file and leaves its artifacts in the output
// folder next to an updated manifest.

#include <mfgweak.h>

#include <CLI11.hpp>

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

namespace {

struct StageArgs {
    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int threads = 0;
};

const std::vector<const char*>& summary_fields_for(const std::string& stage) {
    static const std::vector<const char*> simulate = {"terminal_mean",
                                                      "terminal_sd"};
    static const std::vector<const char*> bsde = {"y0_mean", "z0_rms",
                                                  "regression_residual_max"};
    static const std::vector<const char*> mfg = {
        "iterations",     "final_residual", "extra_step_residual",
        "novikov_stat",   "weak_cost",      "terminal_mean"};
    static const std::vector<const char*> diagnose = {
        "z_representation_worst", "malliavin_state_median",
        "malliavin_value_median", "master_residual_rms",
        "density_min_bulk",       "flow_condition_max"};
    static const std::vector<const char*> verify = {"assumption_violations",
                                                    "gamma_hat", "c_hat"};
    static const std::vector<const char*> none = {};
    if (stage == "simulate") return simulate;
    if (stage == "solve-bsde") return bsde;
    if (stage == "solve-mfg") return mfg;
    if (stage == "diagnose") return diagnose;
    if (stage == "verify-assumptions") return verify;
    return none;
}

int run_stage(const std::string& stage, const StageArgs& args) {
    mfgw_run* run = nullptr;
    mfgw_status st = mfgw_run_create(args.config.c_str(), &run);
    if (st != MFGW_OK) {
        std::fprintf(stderr, "error: %s\n", mfgw_last_create_error());
        return mfgw_status_exit_code(st);
    }
    auto finish = [&](mfgw_status s) {
        int code = mfgw_status_exit_code(s);
        if (s != MFGW_OK)
            std::fprintf(stderr, "error: %s\n", mfgw_run_last_error(run));
        mfgw_run_destroy(run);
        return code;
    };

    if (args.seed_set && (st = mfgw_run_set_seed(run, args.seed)) != MFGW_OK)
        return finish(st);
    if (args.threads > 0 && (st = mfgw_run_set_threads(run, args.threads)) != MFGW_OK)
        return finish(st);
    if (!args.out.empty() &&
        (st = mfgw_run_set_output_dir(run, args.out.c_str())) != MFGW_OK)
        return finish(st);

    st = mfgw_run_execute(run, stage.c_str());
    if (st != MFGW_OK) return finish(st);

    std::printf("%s: done\n", stage.c_str());
    for (const char* field : summary_fields_for(stage)) {
        double v = 0.0;
        if (mfgw_run_summary(run, field, &v) == MFGW_OK)
            std::printf("  %s = %.10g\n", field, v);
    }
    std::printf("  manifest = %s\n", mfgw_run_manifest_path(run));
    return finish(MFGW_OK);
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"particle pipeline for drift-corrected diffusions, tilted "
                 "fixed points and their diagnostics"};
    app.set_version_flag("--version", mfgw_version());
    app.require_subcommand(1);

    StageArgs args;
    std::string plot_dir;
    static const char* stages[] = {"simulate", "solve-bsde", "solve-mfg",
                                   "diagnose", "verify-assumptions"};
    static const char* blurbs[] = {
        "integrate the particle ensemble and store its endpoints",
        "run the backward value/integrand solve on the frozen flow",
        "iterate the tilted fixed point to an equilibrium flow",
        "field, representation, residual and density diagnostics",
        "check the model against its declared growth and convexity bounds"};
    std::string chosen;
    for (std::size_t k = 0; k < 5; ++k) {
        CLI::App* sub = app.add_subcommand(stages[k], blurbs[k]);
        sub->add_option("--config", args.config, "scenario file")
            ->required()
            ->check(CLI::ExistingFile);
        sub->add_option("--out", args.out, "output folder override");
        sub->add_option("--seed", args.seed, "seed override")
            ->each([&](const std::string&) { args.seed_set = true; });
        sub->add_option("--threads", args.threads, "worker thread override")
            ->check(CLI::PositiveNumber);
        sub->callback([&chosen, name = std::string(stages[k])] { chosen = name; });
    }
    CLI::App* plots = app.add_subcommand(
        "emit-plots", "render the svg set from a finished run folder");
    plots->add_option("--run", plot_dir, "run folder with csv artifacts")
        ->required();
    plots->callback([&chosen] { chosen = "emit-plots"; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    if (chosen == "emit-plots") {
        mfgw_status st = mfgw_emit_plots(plot_dir.c_str());
        if (st != MFGW_OK) {
            std::fprintf(stderr, "error: %s\n", mfgw_last_create_error());
            return mfgw_status_exit_code(st);
        }
        std::printf("emit-plots: done\n");
        return 0;
    }
    return run_stage(chosen, args);
}
