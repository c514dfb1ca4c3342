#pragma once

#include "mfgweak/measure.hpp"
#include "mfgweak/types.hpp"

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace mfgw {

// Running-cost model L(x, a, mu) together with the derivative evaluators the
// solver and the structural checks consume.  Implementations must be strongly
// convex in the control; the declared constants are the bounds the model
// claims to satisfy and are what verify_assumptions tests against.
class LagrangianModel {
  public:
    virtual ~LagrangianModel() = default;

    virtual Index dim_state() const = 0;
    virtual Index dim_control() const = 0;

    virtual double value(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const = 0;
    virtual Vec grad_a(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const = 0;
    virtual Vec grad_x(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const = 0;
    virtual Mat hess_aa(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const = 0;

    // Mixed and state Hessians default to central differences of the exact
    // first derivatives; models with closed forms should override.
    virtual Mat hess_ax(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const;
    virtual Mat hess_xx(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const;

    // Measure derivatives evaluated at support point v (both return one row
    // per derivative component, columns indexed by v-space dimension).
    virtual Vec dmu_value(const Vec& x, const Vec& a, const EmpiricalMeasure& mu,
                          const Vec& v) const = 0;
    virtual Mat dmu_grad_a(const Vec& x, const Vec& a, const EmpiricalMeasure& mu,
                           const Vec& v) const;
    virtual Mat dmu_grad_x(const Vec& x, const Vec& a, const EmpiricalMeasure& mu,
                           const Vec& v) const;

    // Directional third derivative in the control.  The default is nested
    // central differences; checks that rely on it are demoted to advisory
    // unless has_third_aaa() reports an exact implementation.
    virtual bool has_third_aaa() const { return false; }
    virtual double third_aaa(const Vec& x, const Vec& a, const EmpiricalMeasure& mu,
                             const Vec& xi1, const Vec& xi2, const Vec& xi3) const;

    virtual bool has_analytic_hessians() const { return false; }

    // Constants of the claimed structural bounds.
    virtual double declared_C() const = 0;
    virtual double declared_gamma() const = 0;
    virtual double declared_eta() const = 0;

    virtual std::string name() const = 0;
};

// Weight factor for the archetypal quadratic running cost f(x, mu)|a|^2.
// The sup_* methods are the bounds used to derive the model's declared
// constants; they must dominate the corresponding derivative everywhere.
class MeasureWeight {
  public:
    virtual ~MeasureWeight() = default;

    virtual double value(const Vec& x, const EmpiricalMeasure& mu) const = 0;
    virtual Vec grad_x(const Vec& x, const EmpiricalMeasure& mu) const = 0;
    virtual Mat hess_x(const Vec& x, const EmpiricalMeasure& mu) const = 0;
    virtual Vec dmu(const Vec& x, const EmpiricalMeasure& mu, const Vec& v) const = 0;
    virtual Mat dmu_grad_x(const Vec& x, const EmpiricalMeasure& mu, const Vec& v) const = 0;

    virtual double inf_value() const = 0;
    virtual double sup_value() const = 0;
    virtual double sup_grad_x() const = 0;
    virtual double sup_hess_x() const = 0;
    virtual double sup_dmu() const = 0;
    virtual double sup_dmu_grad_x() const = 0;

    virtual std::string name() const = 0;
};

std::shared_ptr<MeasureWeight> make_constant_weight(Index dim, double value);

// f = base + amp * tanh(wx . x + wmu . mean(mu) + bias); requires base > |amp|
// so that inf f stays positive.
std::shared_ptr<MeasureWeight> make_tanh_weight(double base, double amp, Vec wx,
                                                Vec wmu, double bias);

// L(x, a, mu) = f(x, mu) |a|^2.
class QuadraticCostModel : public LagrangianModel {
  public:
    QuadraticCostModel(Index dim_state, Index dim_control,
                       std::shared_ptr<MeasureWeight> weight);

    Index dim_state() const override { return d_; }
    Index dim_control() const override { return m_; }

    double value(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const override;
    Vec grad_a(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const override;
    Vec grad_x(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const override;
    Mat hess_aa(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const override;
    Mat hess_ax(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const override;
    Mat hess_xx(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const override;
    Vec dmu_value(const Vec& x, const Vec& a, const EmpiricalMeasure& mu,
                  const Vec& v) const override;
    Mat dmu_grad_a(const Vec& x, const Vec& a, const EmpiricalMeasure& mu,
                   const Vec& v) const override;
    Mat dmu_grad_x(const Vec& x, const Vec& a, const EmpiricalMeasure& mu,
                   const Vec& v) const override;
    bool has_third_aaa() const override { return true; }
    double third_aaa(const Vec&, const Vec&, const EmpiricalMeasure&, const Vec&,
                     const Vec&, const Vec&) const override {
        return 0.0;
    }
    bool has_analytic_hessians() const override { return true; }

    double declared_C() const override { return c_; }
    double declared_gamma() const override { return gamma_; }
    double declared_eta() const override { return eta_; }

    std::string name() const override { return "quadratic(" + weight_->name() + ")"; }

    const MeasureWeight& weight() const { return *weight_; }

  private:
    Index d_, m_;
    std::shared_ptr<MeasureWeight> weight_;
    double c_, gamma_, eta_;
};

// L(a) = |a|^4: smooth and convex but with unbounded control Hessian, so the
// quadratic-behaviour bounds fail at large |a|.  Used to exercise the checker.
class QuarticControlCostModel : public LagrangianModel {
  public:
    QuarticControlCostModel(Index dim_state, Index dim_control, double declared_C,
                            double declared_gamma, double declared_eta);

    Index dim_state() const override { return d_; }
    Index dim_control() const override { return m_; }
    double value(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const override;
    Vec grad_a(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const override;
    Vec grad_x(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const override;
    Mat hess_aa(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const override;
    Mat hess_ax(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const override;
    Mat hess_xx(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const override;
    Vec dmu_value(const Vec& x, const Vec& a, const EmpiricalMeasure& mu,
                  const Vec& v) const override;
    Mat dmu_grad_a(const Vec& x, const Vec& a, const EmpiricalMeasure& mu,
                   const Vec& v) const override;
    Mat dmu_grad_x(const Vec& x, const Vec& a, const EmpiricalMeasure& mu,
                   const Vec& v) const override;
    bool has_third_aaa() const override { return true; }
    double third_aaa(const Vec& x, const Vec& a, const EmpiricalMeasure& mu,
                     const Vec& xi1, const Vec& xi2, const Vec& xi3) const override;
    bool has_analytic_hessians() const override { return true; }
    double declared_C() const override { return c_; }
    double declared_gamma() const override { return gamma_; }
    double declared_eta() const override { return eta_; }
    std::string name() const override { return "quartic-control"; }

  private:
    Index d_, m_;
    double c_, gamma_, eta_;
};

struct ControlSolveOptions {
    double tol = 1e-10; // on the gradient residual |grad_a L - z|
    int max_iter = 100;
};

// Pointwise optimal control: the unique a with grad_a L(x, a, mu) = z, found
// by damped Newton (Armijo on the squared residual) with a gradient fallback.
Vec optimal_control(const LagrangianModel& model, const Vec& x, const Vec& z,
                    const EmpiricalMeasure& mu, const ControlSolveOptions& opts = {},
                    const Vec* warm_start = nullptr);

struct HamiltonianValue {
    double h = 0.0; // inf_a { L - a . z }
    Vec control;    // the minimizer
};

HamiltonianValue hamiltonian(const LagrangianModel& model, const Vec& x, const Vec& z,
                             const EmpiricalMeasure& mu,
                             const ControlSolveOptions& opts = {});

// Backward-equation driver F(x, z, mu) = L(x, optimal control, mu), plus the
// derivative bundle used by the first-variation equations:
//   grad_z F = G z with G the inverse control Hessian at the optimum,
//   grad_x F = grad_x L - hess_ax^T (G z),
//   dmu    F = dmu L   - dmu_grad_a^T (G z).
struct DriverValue {
    double f = 0.0;
    Vec control;
    Vec grad_z;   // length m
    Vec grad_x;   // length d
    Mat gain;     // G, m x m
};

DriverValue driver(const LagrangianModel& model, const Vec& x, const Vec& z,
                   const EmpiricalMeasure& mu, const ControlSolveOptions& opts = {},
                   const Vec* warm_start = nullptr);

Vec dmu_driver(const LagrangianModel& model, const DriverValue& dv, const Vec& x,
               const EmpiricalMeasure& mu, const Vec& v);

// ---- structural checks ----------------------------------------------------

struct AssumptionViolation {
    std::string item;  // e.g. "A1.3" or "prop.c"
    double lhs = 0.0;
    double rhs = 0.0;
    std::string where; // sample location description
};

struct AssumptionReport {
    double gamma_hat = 0.0; // smallest control-Hessian eigenvalue seen
    double c_hat = 0.0;     // largest constant the sampled bounds would need
    long samples_checked = 0;
    std::vector<AssumptionViolation> violations;
    std::vector<AssumptionViolation> advisories; // finite-difference-only checks
    bool passed() const { return violations.empty(); }
};

struct AssumptionSampleSpec {
    std::vector<Vec> x_points;
    std::vector<Vec> a_points;
    std::vector<EmpiricalMeasure> measures;
    int pair_samples = 64; // budget for the Lipschitz-type pair checks
};

// Default sampling net: x in [-2,2]^d, a in [-10,10]^m (endpoints included),
// three Gaussian particle clouds for the measure argument.
AssumptionSampleSpec default_assumption_samples(Index dim_state, Index dim_control,
                                                u64 seed = 7);

AssumptionReport verify_assumptions(const LagrangianModel& model,
                                    const AssumptionSampleSpec& samples);

struct MonotonicityResult {
    double value = 0.0;
    bool nonnegative = false;
};

// Pairing value  int [B(x, mu) - B(x, mu')] d(mu - mu')(x), evaluated exactly
// on the union of the two supports.
MonotonicityResult monotonicity_check(
    const std::function<double(const Vec&, const EmpiricalMeasure&)>& b,
    const EmpiricalMeasure& mu, const EmpiricalMeasure& mu_prime);

} // namespace mfgw
