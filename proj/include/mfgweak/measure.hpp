#pragma once

#include "mfgweak/grid.hpp"
#include "mfgweak/rng.hpp"
#include "mfgweak/types.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mfgw {

// Weighted particle cloud.  Points are shared (never copied per iteration --
// the equilibrium solver re-weights the same support many times), weights are
// owned and kept normalized.  Mean and per-dimension stddev are computed once
// at construction so that model evaluators can read them per particle without
// quadratic cost.
class EmpiricalMeasure {
  public:
    EmpiricalMeasure() = default;

    static EmpiricalMeasure uniform(std::shared_ptr<const Mat> points);
    static EmpiricalMeasure uniform(Mat points);
    static EmpiricalMeasure weighted(std::shared_ptr<const Mat> points, Vec weights);
    static EmpiricalMeasure weighted(Mat points, Vec weights);

    Index size() const { return points_ ? points_->rows() : 0; }
    Index dim() const { return points_ ? points_->cols() : 0; }

    const Mat& points() const { return *points_; }
    std::shared_ptr<const Mat> points_ptr() const { return points_; }
    Vec point(Index i) const { return points_->row(i).transpose(); }

    bool is_uniform() const { return uniform_; }
    const Vec& weights() const { return weights_; }
    double weight(Index i) const { return weights_[i]; }

    const Vec& mean() const { return mean_; }
    const Vec& stddev() const { return stddev_; }
    // Root-mean-square of the per-dimension stddevs; the default bump scale
    // for the particle-shift derivative below.
    double spread() const { return spread_; }

  private:
    std::shared_ptr<const Mat> points_;
    Vec weights_;
    bool uniform_ = true;
    Vec mean_;
    Vec stddev_;
    double spread_ = 0.0;

    void finalize();
};

// Law flow: one measure per grid node, all on supports of equal particle count.
struct LawFlow {
    TimeGrid grid;
    std::vector<EmpiricalMeasure> nodes;

    void validate() const;
};

enum class W2Mode {
    Exact,  // d = 1: weighted quantile coupling; d > 1: optimal assignment
    Sliced, // projection average; an approximation and labelled as such
};

struct W2Options {
    W2Mode mode = W2Mode::Exact;
    int sliced_directions = 64;
    u64 sliced_seed = 0x51a03u; // direction set is fixed, not per-run noise
    Index exact_assignment_cap = 512;
};

// 2-Wasserstein distance between particle measures.
// Exact mode supports any weights in d = 1 and uniform equal-size clouds up
// to the assignment cap in d > 1; anything else must ask for Sliced.
double wasserstein2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                    const W2Options& opts = {});

// Exact minimum-cost assignment for a square cost matrix (O(n^3) potentials
// method).  Returns the column matched to each row; total cost goes to *cost.
std::vector<Index> assignment_min_cost(const Mat& cost_matrix, double* cost);

// Convergence metric used by the equilibrium solver: exact weighted quantile
// distance in d = 1; in higher dimension both measures are resampled to at
// most `cap` uniform points with a fixed seed and matched exactly.
double w2_convergence_metric(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                             u64 subsample_seed, Index cap = 512);

// Systematic resampling of a weighted cloud to `count` uniform points.
// Deterministic in (seed, salt).
EmpiricalMeasure resample_uniform(const EmpiricalMeasure& mu, Index count,
                                  u64 seed, u64 salt = 0);

struct CouplingBoundCheck {
    double w2sq = 0.0;         // exact squared distance between the two clouds
    double pairing_msd = 0.0;  // mean squared displacement of the given pairing
    bool ok = false;           // w2sq <= pairing_msd (up to roundoff slack)
};

// Any pairing of two equally sized clouds is a coupling, so its mean squared
// displacement dominates the squared distance.  Checks that on the inputs.
CouplingBoundCheck coupling_bound_check(const Mat& x, const Mat& y);

// Particle-shift proxy for the measure derivative of f at the i-th support
// point: component k is N * [f(mu with x_i + h e_k) - f(mu with x_i - h e_k)] / (2h).
// Requires uniform weights.  h <= 0 selects the default 0.1 * spread / sqrt(N).
Vec lions_derivative(const std::function<double(const EmpiricalMeasure&)>& f,
                     const EmpiricalMeasure& mu, Index i, double h = 0.0);

struct LipschitzProbe {
    double c_hat = 0.0;   // largest observed difference quotient
    int pairs = 0;
    bool flagged = false; // c_hat exceeds 10x the declared constant
};

// Samples pairs of (measure, support point) and bounds the Lipschitz constant
// of the measure derivative of f in (W2 + point) distance.
LipschitzProbe lipschitz_probe_dmu(
    const std::function<double(const EmpiricalMeasure&)>& f,
    const std::vector<EmpiricalMeasure>& measures, double declared_c);

// CSV round trip, one row per particle: weight,x0,...,x{d-1}.
void write_measure_csv(const std::string& path, const EmpiricalMeasure& mu);
EmpiricalMeasure read_measure_csv(const std::string& path);

} // namespace mfgw
