#pragma once

#include "mfgweak/forward.hpp"
#include "mfgweak/grid.hpp"
#include "mfgweak/measure.hpp"
#include "mfgweak/model.hpp"
#include "mfgweak/types.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace mfgw {

// Total-degree polynomial features on R^d, exponents enumerated in a fixed
// graded order so feature indices are stable.
class PolyBasis {
  public:
    PolyBasis(Index dim, int degree);

    Index dim() const { return dim_; }
    int degree() const { return degree_; }
    Index count() const { return static_cast<Index>(exponents_.size()); }

    Vec features(const Vec& x) const;
    Mat feature_jacobian(const Vec& x) const; // count x dim

  private:
    Index dim_;
    int degree_;
    std::vector<std::vector<int>> exponents_;
};

enum class BasisKind { Polynomial, LocalKernel };

struct RegressionBasis {
    BasisKind kind = BasisKind::Polynomial;
    int degree = 2;          // polynomial
    double bandwidth = 0.5;  // local kernel
    double ridge = 1e-8;
};

// Conditional-expectation estimator at one grid node.  Polynomial mode fits
// ridge-regularized least squares on per-node standardized features (one Gram
// factorization shared by all targets); kernel mode is Nadaraya-Watson
// smoothing.  All reductions are fixed-order, so fits are bit-reproducible.
class NodeRegression {
  public:
    NodeRegression(const RegressionBasis& spec, const Mat& states, int threads = 1);

    // Coefficients for one target vector (kernel mode: returns the target,
    // which doubles as the stored "coefficients").
    Vec fit(const Vec& targets) const;
    // Fitted values at this node's own particles.
    Vec predict(const Vec& coeffs) const;
    double value_at(const Vec& coeffs, const Vec& x) const;
    Vec gradient_at(const Vec& coeffs, const Vec& x) const;

  private:
    RegressionBasis spec_;
    const Mat& states_;
    std::shared_ptr<PolyBasis> basis_;
    Vec center_, scale_;
    Mat features_; // particles x count, standardized
    Eigen::LDLT<Mat> gram_;
    double kernel_weight(const Vec& x, Index i) const;
};

// Terminal condition g(x, mu) with the derivative evaluators the variational
// equations need.  grad_x / dmu may be empty for plain solves.
struct TerminalCondition {
    std::function<double(const Vec&, const EmpiricalMeasure&)> value;
    std::function<Vec(const Vec&, const EmpiricalMeasure&)> grad_x;
    std::function<Vec(const Vec&, const EmpiricalMeasure&, const Vec&)> dmu;
};

struct BsdeOptions {
    RegressionBasis basis;
    bool truncate_z = false;  // switched on after a non-finite backward pass
    double truncation_r0 = 10.0;
    int threads = 1;
    ControlSolveOptions control;
    // Per-step control matrices from an earlier solve on the same ensemble;
    // used to start the pointwise minimizations.  Not owned, may be null.
    const std::vector<Mat>* control_warm_start = nullptr;
};

struct BsdeSolution {
    TimeGrid grid;
    Index particles = 0;
    Index noise_dim = 0;
    Mat Y;                     // particles x nodes
    std::vector<Mat> Z;        // step -> particles x noise_dim
    std::vector<Mat> control;  // step -> particles x control_dim (empty without model)
    std::vector<double> regression_residual; // rms one-step projection residual
    std::vector<double> truncation_radius;   // clip radius per step, 0 when off
    long truncation_events = 0;

    const Mat& z_at(Index step) const { return Z[static_cast<std::size_t>(step)]; }
};

// Least-squares Monte Carlo backward induction for
//   dY = -F(X, Z, mu) dt + Z dW,   Y_T = g(X_T, mu_T)
// on a frozen law flow.  model == nullptr means F = 0 (plain martingale
// projection).  Z is regressed on centered increments (Y_{n+1} minus its
// fitted conditional mean), which removes the 1/dt noise amplification of the
// naive estimator.
BsdeSolution solve_backward(const PathEnsemble& paths, const LagrangianModel* model,
                            const LawFlow& flow, const TerminalCondition& g,
                            const BsdeOptions& opts = {});

// Largest fitted conditional tail energy  max_{n >= from_node} max_i
// E[ sum_{k>=n} |Z_k|^2 dt | X_n = X_i ], clamped at zero.  Non-increasing in
// from_node by construction.
double bmo_estimate(const BsdeSolution& sol, const PathEnsemble& paths,
                    Index from_node = 0);

// sup_n rms_i(Y_a - Y_b) + sup_n rms_i|Z_a - Z_b|.
double picard_residual(const BsdeSolution& a, const BsdeSolution& b);

} // namespace mfgw
