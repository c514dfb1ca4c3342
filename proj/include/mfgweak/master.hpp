#pragma once

#include "mfgweak/bsde.hpp"
#include "mfgweak/forward.hpp"
#include "mfgweak/measure.hpp"
#include "mfgweak/model.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace mfgw {

// The decoupling field u(t_n, x) read off a backward solution: one value
// regression per grid node, evaluable off the training cloud.  Holds the
// ensemble alive because the node regressions borrow its state blocks.
struct MasterFieldEstimate {
    TimeGrid grid;
    std::shared_ptr<const PathEnsemble> paths;
    std::vector<std::shared_ptr<NodeRegression>> nodes;
    std::vector<Vec> coeffs;
    std::vector<double> fit_residual; // rms training residual per node

    double value(Index node, const Vec& x) const;
    Vec gradient(Index node, const Vec& x) const;
    // Central-difference Hessian of the fitted value (exact for degree <= 2).
    Mat hessian(Index node, const Vec& x, double step = 1e-4) const;
};

MasterFieldEstimate estimate_master_field(
    const std::shared_ptr<const PathEnsemble>& paths, const BsdeSolution& sol,
    const RegressionBasis& basis, int threads = 1);

// Relative gap between the regressed martingale integrand and the field
// gradient contracted with the diffusion:  rms_i |Z_i - sigma(X_i)^T du(X_i)|
// over rms_i |Z_i|, one entry per time step.
struct RepresentationCheck {
    std::vector<double> rel_error;
    double worst = 0.0;
};

RepresentationCheck check_z_representation(const MasterFieldEstimate& u,
                                           const BsdeSolution& sol,
                                           const PathEnsemble& paths,
                                           const VectorFieldSet& vfs,
                                           int threads = 1);

// Spot checks of the noise-derivative representations on random
// (source node, target node, particle) probes:
//   - the state derivative against a replayed-path bump quotient,
//   - the value derivative at equal times against the martingale integrand,
//   - the causality rule (sources after the target contribute nothing).
struct MalliavinCheck {
    double median_state_vs_bump = 0.0;
    double median_value_vs_z = 0.0;
    double max_causality_violation = 0.0;
    Index probes = 0;
};

MalliavinCheck check_malliavin_representations(
    const MasterFieldEstimate& u, const BsdeSolution& sol, const TangentFlow& tf,
    const VectorFieldSet& vfs, const PathEnsemble& paths, Index probes = 50,
    double bump = 1e-4, u64 seed = 0);

// First variation of the backward pair along an initial-state direction:
//   dY_N = dg . dX_N + E'[ d_mu g (X') . dX' ]
//   dY_n = E_n[dY_{n+1}] + dt ( dF_x . dX + dF_z . dZ + E'[ d_mu F (X') . dX' ] )
// with dX = (tangent flow) . direction and the E' averages taken over an
// independent ensemble copy carrying its own tangent flow.
struct TangentBsdeOptions {
    RegressionBasis basis;
    int threads = 1;
    bool measure_coupling = true; // evaluate the law-derivative averages
    Index copy_particles = 256;
    u64 copy_seed_offset = 0x9e37;
};

struct TangentBsdeSolution {
    Mat dY;              // particles x nodes
    std::vector<Mat> dZ; // step -> particles x noise_dim
    double dY0_mean = 0.0;
};

TangentBsdeSolution solve_tangent_bsde(const LagrangianModel& model,
                                       const VectorFieldSet& vfs,
                                       const InitialCondition& init,
                                       const PathEnsemble& paths,
                                       const TangentFlow& tf,
                                       const BsdeSolution& sol,
                                       const LawFlow& flow,
                                       const TerminalCondition& g,
                                       const Vec& direction,
                                       const TangentBsdeOptions& opts);

// Pointwise defect of the field in its backward equation,
//   d_t u + b . du + <flow drift terms> + 1/2 tr[sigma sigma^T d2u] + L(x, a*, mu),
// sampled at interior nodes (time derivative by central difference) on
// subsampled particle states.  The two law-derivative terms need evaluators
// of the field's measure sensitivity; scenarios whose field does not couple
// through the law leave them unset and the terms drop.
struct MasterResidualOptions {
    Index probe_count = 200;
    double hessian_step = 1e-4;
    u64 seed = 0x5eed;
    int threads = 1;
    std::function<Vec(Index node, const Vec& x, const Vec& v)> dmu_field;
    std::function<Mat(Index node, const Vec& x, const Vec& v)> dv_dmu_field;
};

struct MasterResidual {
    std::vector<double> node_rms; // interior nodes 1..steps-1
    double rms = 0.0;
    double linf = 0.0;
};

MasterResidual master_equation_residual(const MasterFieldEstimate& u,
                                        const LagrangianModel* model,
                                        const VectorFieldSet& vfs,
                                        const LawFlow& flow,
                                        const MasterResidualOptions& opts = {});

// Smoothed per-coordinate marginals of a weighted cloud: Gaussian kernel on a
// uniform grid, rule-of-thumb bandwidth.  Reports the smallest density inside
// the 5..95% bulk and the largest curvature, the working summaries for
// "mass actually spreads" checks.
struct DensityDiagnostic {
    Mat grid;     // grid_points x dim
    Mat density;  // grid_points x dim
    Vec bandwidth;
    Vec min_bulk_density;
    Vec max_curvature;
};

DensityDiagnostic density_diagnostic(const EmpiricalMeasure& mu,
                                     Index grid_points = 256);

} // namespace mfgw
