#pragma once

#include "mfgweak/bsde.hpp"
#include "mfgweak/forward.hpp"
#include "mfgweak/measure.hpp"
#include "mfgweak/model.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace mfgw {

// Exponential change-of-measure weights for a control process evaluated along
// the uncontrolled paths:
//   logM[i][n] = -sum_{k<n} a_k . dW_k - 1/2 sum_{k<n} |a_k|^2 dt.
// Under the resulting measure the paths carry drift b - sigma a.
struct GirsanovWeights {
    Mat logM; // particles x nodes
    Mat M;    // exp(logM)
    Vec mean_per_node;
    Vec se_per_node;
    double novikov_stat = 0.0; // sample mean of exp(1/2 sum |a|^2 dt)
    bool novikov_flagged = false;
};

GirsanovWeights girsanov_weights(const PathEnsemble& paths,
                                 const std::vector<Mat>& controls, int threads = 1);

// Tilted cost  sum_i M[i][N] { g(X_N, mu_N) + sum_n L(X_n, a_n, mu_n) dt } / N_p.
// model == nullptr drops the running-cost term.
double weak_cost(const PathEnsemble& paths, const GirsanovWeights& weights,
                 const std::vector<Mat>& controls, const LawFlow& flow,
                 const LagrangianModel* model, const TerminalCondition& g,
                 int threads = 1);

// Paired comparison of the tilted cost at a control ensemble and at the same
// ensemble shifted by a constant delta in every control component.  The
// standard error is that of the per-particle cost difference, so the probe
// resolves far below the absolute Monte Carlo error.
struct CostProbe {
    double base_cost = 0.0;
    double perturbed_cost = 0.0;
    double diff = 0.0; // perturbed - base
    double diff_se = 0.0;
};

CostProbe perturb_cost_probe(const PathEnsemble& paths,
                             const std::vector<Mat>& controls, double delta,
                             const LawFlow& flow, const LagrangianModel& model,
                             const TerminalCondition& g, int threads = 1);

enum class MeasureMode { Tilted, Untilted };

// Starting weights of the fixed-point iteration, all on the simulated support:
// uniform weights, a point mass at the support point nearest `point`, or
// weights proportional to a Gaussian density.
enum class InitFlowKind { Uniform, Point, Gaussian };

struct EquilibriumOptions {
    Index particles = 0;
    u64 seed = 0;
    double damping = 1.0; // theta in (0, 1]: weight blend toward the candidate
    double tol = 1e-3;
    int max_iter = 50;
    MeasureMode measure_mode = MeasureMode::Tilted;
    InitFlowKind init_flow = InitFlowKind::Uniform;
    Vec init_point; // Point: target; Gaussian: mean
    Vec init_sd;    // Gaussian: per-dimension spread
    BsdeOptions bsde;
    int threads = 1;
    bool allow_assumption_violations = false;
    u64 metric_seed = 0x77; // subsample stream of the stopping metric
};

struct EquilibriumResult {
    std::shared_ptr<const PathEnsemble> paths;
    LawFlow flow;               // converged law flow
    BsdeSolution solution;      // backward solve on the converged flow
    GirsanovWeights weights;    // weights of that solve's controls
    int iterations = 0;         // fixed-point iterations until the stop rule
    std::vector<double> residual_history;
    bool converged = false;
    MeasureMode measure_mode = MeasureMode::Tilted;
    // One further damped step taken from the converged flow (not applied);
    // small values certify the fixed point.
    double extra_step_residual = 0.0;
    std::vector<CouplingBoundCheck> coupling_checks; // terminal node, per iteration
};

// Damped fixed-point iteration on the law flow: simulate once, then
// alternately solve the backward equation on the current flow and re-weight
// the (fixed) supports with the resulting tilt.  Positions never move; only
// weights are blended, so every stopping-metric evaluation compares measures
// on a common support.
EquilibriumResult solve_equilibrium(const LagrangianModel& model,
                                    const VectorFieldSet& vfs,
                                    const InitialCondition& init,
                                    const TimeGrid& grid,
                                    const TerminalCondition& g,
                                    const EquilibriumOptions& opts);

// Unweighted empirical flow of an ensemble (supports shared, not copied).
LawFlow unweighted_flow(const std::shared_ptr<const PathEnsemble>& paths);

// Simulates the drifted dynamics dX = (b + sigma a(X)) dt + sigma dW directly
// and prices the same scenario through the uncontrolled ensemble with
// change-of-measure weights; the two costs must agree within Monte Carlo
// error.  Both sides share one noise stream, so the comparison is paired.
struct ConsistencyResult {
    double j_strong = 0.0;
    double j_weak = 0.0;
    double diff = 0.0;
    double se_strong = 0.0;
    double se_weak = 0.0;
    double pooled_se = 0.0;
};

ConsistencyResult strong_weak_consistency(
    const LagrangianModel* model, const VectorFieldSet& vfs,
    const InitialCondition& init, const TimeGrid& grid, Index particles, u64 seed,
    const std::function<Vec(const Vec&)>& alpha, const TerminalCondition& g,
    int threads = 1);

} // namespace mfgw
