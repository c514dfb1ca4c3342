#pragma once

#include "mfgweak/bsde.hpp"
#include "mfgweak/forward.hpp"
#include "mfgweak/master.hpp"
#include "mfgweak/mfg.hpp"
#include "mfgweak/model.hpp"

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace mfgw {

// One experiment description, read from an ini-style file: [section] headers,
// key = value lines, '#'/';' comments.  Unknown sections or keys are rejected
// with their line number, as are malformed values, so a typo cannot silently
// fall back to a default.
struct ScenarioConfig {
    // [run]
    std::string name = "run";
    u64 seed = 1;
    int threads = 1;
    std::string out_dir = ".";

    // [grid]
    TimeGrid grid{0.0, 1.0, 50};

    // [forward]
    Index particles = 1000;
    Scheme scheme = Scheme::EulerIto;
    Index store_stride = 1;
    Vec x0;
    Vec x0_sd; // empty => deterministic start

    // [fields]
    enum class FieldKind { Constant, ScalarLinear, Sine, Heisenberg };
    FieldKind field_kind = FieldKind::Constant;
    Index state_dim = 1;
    Index noise_dim = 1;
    Vec sigma_entries; // constant: row-major state_dim x noise_dim
    double s0 = 1.0, s1 = 0.0;
    double amp = 0.3, freq = 1.0, offset = 1.0;

    // [model]
    enum class ModelKind { None, Quadratic, Quartic };
    ModelKind model_kind = ModelKind::None;
    enum class WeightKind { Constant, Tanh };
    WeightKind weight_kind = WeightKind::Constant;
    double f_value = 1.0;
    double tanh_base = 1.0, tanh_amp = 0.0, tanh_bias = 0.0;
    Vec tanh_wx, tanh_wmu;
    double quartic_c = 12.0, quartic_gamma = 2.0, quartic_eta = 0.02;

    // [terminal]
    enum class TerminalKind { Zero, Linear, Quadratic, Power, LinearMean };
    TerminalKind terminal_kind = TerminalKind::Zero;
    double terminal_coeff = 1.0;
    int terminal_power = 4;
    double terminal_shift = 0.0;

    // [bsde]
    RegressionBasis basis;
    bool truncate_z = false;
    double truncation_r0 = 10.0;

    // [equilibrium]
    double damping = 1.0;
    double tol = 1e-3;
    int max_iter = 50;
    MeasureMode measure_mode = MeasureMode::Tilted;
    InitFlowKind init_flow = InitFlowKind::Uniform;
    Vec init_point, init_sd;
    bool allow_assumption_violations = false;

    // [diagnostics]
    Index probes = 50;
    double bump = 1e-4;
    Index residual_probes = 200;
    Index density_grid = 256;

    // [output]
    Index max_csv_nodes = 33;
    bool write_snapshot = false;
};

ScenarioConfig parse_scenario(const std::string& text, const std::string& origin);
ScenarioConfig parse_scenario_file(const std::string& path);

// Builders off a parsed configuration.
std::shared_ptr<VectorFieldSet> make_fields(const ScenarioConfig& cfg);
std::shared_ptr<LagrangianModel> make_model(const ScenarioConfig& cfg);
TerminalCondition make_terminal(const ScenarioConfig& cfg);
InitialCondition make_initial(const ScenarioConfig& cfg);

// A run folder in the making: executes the pipeline stages, drops their
// artifacts into out_dir, and keeps a manifest (stage status, timings,
// convergence numbers, file checksums) current after every stage.
class ScenarioRun {
  public:
    explicit ScenarioRun(ScenarioConfig cfg);

    void set_seed(u64 seed);
    void set_threads(int threads);
    void set_output_dir(const std::string& dir);

    // One of: simulate, solve-bsde, solve-mfg, diagnose, verify-assumptions,
    // emit-plots.  Stages pull in what they depend on (a backward solve
    // simulates first; diagnostics solve first if nothing is solved yet).
    void execute(const std::string& stage);

    const ScenarioConfig& config() const { return cfg_; }
    const PathEnsemble* paths() const { return paths_.get(); }
    const BsdeSolution* solution() const;
    const EquilibriumResult* equilibrium() const { return equilibrium_.get(); }
    const AssumptionReport* assumptions() const { return assumptions_.get(); }

    // Headline numbers for embedders; NaN where the producing stage did not run.
    double summary(const std::string& field) const;

    std::string manifest_path() const;

  private:
    void ensure_simulated();
    void ensure_solved();
    void stage_simulate();
    void stage_solve_bsde();
    void stage_solve_mfg();
    void stage_diagnose();
    void stage_verify_assumptions();
    void stage_emit_plots();
    void record_stage(const std::string& name, double seconds,
                      const std::string& detail);
    void write_manifest();
    std::string artifact(const std::string& file) const;
    void note_artifact(const std::string& file);

    ScenarioConfig cfg_;
    std::shared_ptr<VectorFieldSet> fields_;
    std::shared_ptr<LagrangianModel> model_;
    std::shared_ptr<const PathEnsemble> paths_;
    std::unique_ptr<BsdeSolution> bsde_;
    std::unique_ptr<LawFlow> bsde_flow_;
    std::unique_ptr<EquilibriumResult> equilibrium_;
    std::unique_ptr<AssumptionReport> assumptions_;
    std::map<std::string, double> summary_;
    std::vector<std::string> artifacts_;
    struct StageNote {
        std::string name;
        double seconds = 0.0;
        std::string detail;
    };
    std::vector<StageNote> stages_;
};

// Renders the plot set from a finished run folder's csv artifacts
// (self-contained svg, no external tooling).  Fails with MissingArtifacts
// when the producing stages have not run.
void emit_plots(const std::string& run_dir);

// Applies the MFGW_MAX_MB environment cap to a projected allocation.
void enforce_memory_cap(double projected_bytes);

} // namespace mfgw
