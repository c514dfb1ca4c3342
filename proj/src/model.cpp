#include "mfgweak/model.hpp"

#include "mfgweak/errors.hpp"
#include "mfgweak/rng.hpp"
#include "mfgweak/util.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mfgw {

namespace {

constexpr double kFdStep = 1e-4;

double spectral_norm(const Mat& m) {
    if (m.size() == 0) return 0.0;
    Eigen::JacobiSVD<Mat> svd(m);
    return svd.singularValues()[0];
}

void check_finite(const Vec& v, const char* what) {
    for (Index i = 0; i < v.size(); ++i)
        require(std::isfinite(v[i]), ErrorKind::EvaluatorFailure,
                std::string(what) + " returned a non-finite value");
}

} // namespace

Mat LagrangianModel::hess_ax(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const {
    Index d = dim_state(), m = dim_control();
    Mat out(m, d);
    Vec xs = x;
    for (Index j = 0; j < d; ++j) {
        xs[j] = x[j] + kFdStep;
        Vec up = grad_a(xs, a, mu);
        xs[j] = x[j] - kFdStep;
        Vec dn = grad_a(xs, a, mu);
        xs[j] = x[j];
        out.col(j) = (up - dn) / (2.0 * kFdStep);
    }
    return out;
}

Mat LagrangianModel::hess_xx(const Vec& x, const Vec& a, const EmpiricalMeasure& mu) const {
    Index d = dim_state();
    Mat out(d, d);
    Vec xs = x;
    for (Index j = 0; j < d; ++j) {
        xs[j] = x[j] + kFdStep;
        Vec up = grad_x(xs, a, mu);
        xs[j] = x[j] - kFdStep;
        Vec dn = grad_x(xs, a, mu);
        xs[j] = x[j];
        out.col(j) = (up - dn) / (2.0 * kFdStep);
    }
    return 0.5 * (out + out.transpose()); // symmetrize finite-difference noise
}

Mat LagrangianModel::dmu_grad_a(const Vec& x, const Vec& a, const EmpiricalMeasure& mu,
                                const Vec& v) const {
    Index d = dim_state(), m = dim_control();
    Mat out(m, d);
    Vec as = a;
    for (Index l = 0; l < m; ++l) {
        as[l] = a[l] + kFdStep;
        Vec up = dmu_value(x, as, mu, v);
        as[l] = a[l] - kFdStep;
        Vec dn = dmu_value(x, as, mu, v);
        as[l] = a[l];
        out.row(l) = ((up - dn) / (2.0 * kFdStep)).transpose();
    }
    return out;
}

Mat LagrangianModel::dmu_grad_x(const Vec& x, const Vec& a, const EmpiricalMeasure& mu,
                                const Vec& v) const {
    Index d = dim_state();
    Mat out(d, d);
    Vec xs = x;
    for (Index j = 0; j < d; ++j) {
        xs[j] = x[j] + kFdStep;
        Vec up = dmu_value(xs, a, mu, v);
        xs[j] = x[j] - kFdStep;
        Vec dn = dmu_value(xs, a, mu, v);
        xs[j] = x[j];
        out.row(j) = ((up - dn) / (2.0 * kFdStep)).transpose();
    }
    return out;
}

double LagrangianModel::third_aaa(const Vec& x, const Vec& a, const EmpiricalMeasure& mu,
                                  const Vec& xi1, const Vec& xi2, const Vec& xi3) const {
    // One central difference of the exact control Hessian along xi3.
    Vec up = a + kFdStep * xi3;
    Vec dn = a - kFdStep * xi3;
    Mat diff = hess_aa(x, up, mu) - hess_aa(x, dn, mu);
    return xi1.dot(diff * xi2) / (2.0 * kFdStep);
}

// ---- measure weights -------------------------------------------------------

namespace {

class ConstantWeight final : public MeasureWeight {
  public:
    ConstantWeight(Index dim, double value) : d_(dim), c_(value) {
        require(value > 0.0, ErrorKind::Config, "constant weight must be positive");
    }
    double value(const Vec&, const EmpiricalMeasure&) const override { return c_; }
    Vec grad_x(const Vec&, const EmpiricalMeasure&) const override { return Vec::Zero(d_); }
    Mat hess_x(const Vec&, const EmpiricalMeasure&) const override { return Mat::Zero(d_, d_); }
    Vec dmu(const Vec&, const EmpiricalMeasure&, const Vec&) const override {
        return Vec::Zero(d_);
    }
    Mat dmu_grad_x(const Vec&, const EmpiricalMeasure&, const Vec&) const override {
        return Mat::Zero(d_, d_);
    }
    double inf_value() const override { return c_; }
    double sup_value() const override { return c_; }
    double sup_grad_x() const override { return 0.0; }
    double sup_hess_x() const override { return 0.0; }
    double sup_dmu() const override { return 0.0; }
    double sup_dmu_grad_x() const override { return 0.0; }
    std::string name() const override {
        std::ostringstream os;
        os << "constant " << c_;
        return os.str();
    }

  private:
    Index d_;
    double c_;
};

class TanhWeight final : public MeasureWeight {
  public:
    TanhWeight(double base, double amp, Vec wx, Vec wmu, double bias)
        : base_(base), amp_(amp), wx_(std::move(wx)), wmu_(std::move(wmu)), bias_(bias) {
        require(wx_.size() == wmu_.size(), ErrorKind::ShapeMismatch,
                "weight direction vectors must agree in dimension");
        require(base_ - std::abs(amp_) > 0.0, ErrorKind::Config,
                "tanh weight must stay positive: need base > |amp|");
    }

    double value(const Vec& x, const EmpiricalMeasure& mu) const override {
        return base_ + amp_ * std::tanh(arg(x, mu));
    }
    Vec grad_x(const Vec& x, const EmpiricalMeasure& mu) const override {
        return amp_ * sech2(arg(x, mu)) * wx_;
    }
    Mat hess_x(const Vec& x, const EmpiricalMeasure& mu) const override {
        double t = std::tanh(arg(x, mu));
        return -2.0 * amp_ * (1.0 - t * t) * t * (wx_ * wx_.transpose());
    }
    Vec dmu(const Vec& x, const EmpiricalMeasure& mu, const Vec&) const override {
        // The mean functional has constant measure derivative, so v drops out.
        return amp_ * sech2(arg(x, mu)) * wmu_;
    }
    Mat dmu_grad_x(const Vec& x, const EmpiricalMeasure& mu, const Vec&) const override {
        double t = std::tanh(arg(x, mu));
        return -2.0 * amp_ * (1.0 - t * t) * t * (wx_ * wmu_.transpose());
    }
    double inf_value() const override { return base_ - std::abs(amp_); }
    double sup_value() const override { return base_ + std::abs(amp_); }
    double sup_grad_x() const override { return std::abs(amp_) * wx_.norm(); }
    double sup_hess_x() const override {
        // |2 t (1-t^2)| peaks at 2/sqrt(27) * 2 ~ 0.7698
        return 0.7698004 * std::abs(amp_) * wx_.squaredNorm() + 1e-12;
    }
    double sup_dmu() const override { return std::abs(amp_) * wmu_.norm(); }
    double sup_dmu_grad_x() const override {
        return 0.7698004 * std::abs(amp_) * wx_.norm() * wmu_.norm() + 1e-12;
    }
    std::string name() const override { return "tanh"; }

  private:
    double arg(const Vec& x, const EmpiricalMeasure& mu) const {
        return wx_.dot(x) + wmu_.dot(mu.mean()) + bias_;
    }
    static double sech2(double t) {
        double c = std::cosh(t);
        return 1.0 / (c * c);
    }

    double base_, amp_;
    Vec wx_, wmu_;
    double bias_;
};

} // namespace

std::shared_ptr<MeasureWeight> make_constant_weight(Index dim, double value) {
    return std::make_shared<ConstantWeight>(dim, value);
}

std::shared_ptr<MeasureWeight> make_tanh_weight(double base, double amp, Vec wx,
                                                Vec wmu, double bias) {
    return std::make_shared<TanhWeight>(base, amp, std::move(wx), std::move(wmu), bias);
}

// ---- quadratic model -------------------------------------------------------

QuadraticCostModel::QuadraticCostModel(Index dim_state, Index dim_control,
                                       std::shared_ptr<MeasureWeight> weight)
    : d_(dim_state), m_(dim_control), weight_(std::move(weight)) {
    require(d_ > 0 && m_ > 0, ErrorKind::Config, "model dimensions must be positive");
    require(weight_ != nullptr, ErrorKind::Config, "quadratic model needs a weight");
    require(weight_->inf_value() > 0.0, ErrorKind::Config,
            "quadratic model needs inf f > 0");
    gamma_ = 2.0 * weight_->inf_value();
    eta_ = 1.0 / (4.0 * weight_->sup_value());
    // One constant that dominates every bound the checks ask about, with a
    // little slack so exact arithmetic never trips a false violation.
    double c = std::max({1.0, 2.0 * weight_->sup_value(), 2.0 * weight_->sup_grad_x(),
                         weight_->sup_hess_x(), 2.0 * weight_->sup_dmu(),
                         weight_->sup_dmu_grad_x()});
    c_ = 1.05 * c;
}

double QuadraticCostModel::value(const Vec& x, const Vec& a,
                                 const EmpiricalMeasure& mu) const {
    return weight_->value(x, mu) * a.squaredNorm();
}

Vec QuadraticCostModel::grad_a(const Vec& x, const Vec& a,
                               const EmpiricalMeasure& mu) const {
    return 2.0 * weight_->value(x, mu) * a;
}

Vec QuadraticCostModel::grad_x(const Vec& x, const Vec& a,
                               const EmpiricalMeasure& mu) const {
    return a.squaredNorm() * weight_->grad_x(x, mu);
}

Mat QuadraticCostModel::hess_aa(const Vec& x, const Vec&,
                                const EmpiricalMeasure& mu) const {
    return 2.0 * weight_->value(x, mu) * Mat::Identity(m_, m_);
}

Mat QuadraticCostModel::hess_ax(const Vec& x, const Vec& a,
                                const EmpiricalMeasure& mu) const {
    return 2.0 * a * weight_->grad_x(x, mu).transpose();
}

Mat QuadraticCostModel::hess_xx(const Vec& x, const Vec& a,
                                const EmpiricalMeasure& mu) const {
    return a.squaredNorm() * weight_->hess_x(x, mu);
}

Vec QuadraticCostModel::dmu_value(const Vec& x, const Vec& a, const EmpiricalMeasure& mu,
                                  const Vec& v) const {
    return a.squaredNorm() * weight_->dmu(x, mu, v);
}

Mat QuadraticCostModel::dmu_grad_a(const Vec& x, const Vec& a, const EmpiricalMeasure& mu,
                                   const Vec& v) const {
    return 2.0 * a * weight_->dmu(x, mu, v).transpose();
}

Mat QuadraticCostModel::dmu_grad_x(const Vec& x, const Vec& a, const EmpiricalMeasure& mu,
                                   const Vec& v) const {
    return a.squaredNorm() * weight_->dmu_grad_x(x, mu, v);
}

// ---- quartic model ---------------------------------------------------------

QuarticControlCostModel::QuarticControlCostModel(Index dim_state, Index dim_control,
                                                 double declared_C, double declared_gamma,
                                                 double declared_eta)
    : d_(dim_state), m_(dim_control), c_(declared_C), gamma_(declared_gamma),
      eta_(declared_eta) {
    require(d_ > 0 && m_ > 0, ErrorKind::Config, "model dimensions must be positive");
}

double QuarticControlCostModel::value(const Vec&, const Vec& a,
                                      const EmpiricalMeasure&) const {
    double s = a.squaredNorm();
    return s * s;
}

Vec QuarticControlCostModel::grad_a(const Vec&, const Vec& a,
                                    const EmpiricalMeasure&) const {
    return 4.0 * a.squaredNorm() * a;
}

Vec QuarticControlCostModel::grad_x(const Vec&, const Vec&,
                                    const EmpiricalMeasure&) const {
    return Vec::Zero(d_);
}

Mat QuarticControlCostModel::hess_aa(const Vec&, const Vec& a,
                                     const EmpiricalMeasure&) const {
    return 4.0 * a.squaredNorm() * Mat::Identity(m_, m_) + 8.0 * a * a.transpose();
}

Mat QuarticControlCostModel::hess_ax(const Vec&, const Vec&,
                                     const EmpiricalMeasure&) const {
    return Mat::Zero(m_, d_);
}

Mat QuarticControlCostModel::hess_xx(const Vec&, const Vec&,
                                     const EmpiricalMeasure&) const {
    return Mat::Zero(d_, d_);
}

Vec QuarticControlCostModel::dmu_value(const Vec&, const Vec&, const EmpiricalMeasure&,
                                       const Vec&) const {
    return Vec::Zero(d_);
}

Mat QuarticControlCostModel::dmu_grad_a(const Vec&, const Vec&, const EmpiricalMeasure&,
                                        const Vec&) const {
    return Mat::Zero(m_, d_);
}

Mat QuarticControlCostModel::dmu_grad_x(const Vec&, const Vec&, const EmpiricalMeasure&,
                                        const Vec&) const {
    return Mat::Zero(d_, d_);
}

double QuarticControlCostModel::third_aaa(const Vec&, const Vec& a,
                                          const EmpiricalMeasure&, const Vec& xi1,
                                          const Vec& xi2, const Vec& xi3) const {
    return 8.0 * (xi1.dot(xi2) * a.dot(xi3) + xi1.dot(xi3) * a.dot(xi2) +
                  xi2.dot(xi3) * a.dot(xi1));
}

// ---- pointwise control solve ----------------------------------------------

Vec optimal_control(const LagrangianModel& model, const Vec& x, const Vec& z,
                    const EmpiricalMeasure& mu, const ControlSolveOptions& opts,
                    const Vec* warm_start) {
    Index m = model.dim_control();
    require(z.size() == m, ErrorKind::ShapeMismatch,
            "control target dimension does not match the model");
    Vec a = warm_start ? *warm_start : Vec::Zero(m);
    auto residual = [&](const Vec& ac) -> Vec { return model.grad_a(x, ac, mu) - z; };
    Vec r = residual(a);
    check_finite(r, "grad_a");
    double phi = r.squaredNorm();
    for (int iter = 0; iter < opts.max_iter; ++iter) {
        if (r.norm() <= opts.tol) return a;
        Mat h = model.hess_aa(x, a, mu);
        Vec dir;
        bool newton_ok = false;
        Eigen::LDLT<Mat> ldlt(h);
        if (ldlt.info() == Eigen::Success) {
            dir = ldlt.solve(-r);
            newton_ok = dir.allFinite();
        }
        if (!newton_ok) dir = -h.transpose() * r; // steepest descent on the merit
        double slope = 2.0 * r.dot(h * dir);      // d/dt |residual(a + t dir)|^2 at 0
        if (slope >= 0.0) {
            dir = -h.transpose() * r;
            slope = -2.0 * (h.transpose() * r).squaredNorm();
            if (slope >= 0.0) dir = -r, slope = -2.0 * r.squaredNorm();
        }
        double t = 1.0;
        Vec a_next;
        Vec r_next;
        double phi_next = phi;
        bool accepted = false;
        while (t > 1e-14) {
            a_next = a + t * dir;
            r_next = residual(a_next);
            if (r_next.allFinite()) {
                phi_next = r_next.squaredNorm();
                if (phi_next <= phi + 1e-4 * t * slope) {
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if (!accepted) {
            std::ostringstream os;
            os << "control solve stalled: residual " << std::sqrt(phi) << " after " << iter
               << " iterations";
            fail(ErrorKind::NonConvergence, os.str());
        }
        a = a_next;
        r = r_next;
        phi = phi_next;
    }
    if (r.norm() <= opts.tol) return a;
    std::ostringstream os;
    os << "control solve did not reach tol " << opts.tol << ": residual " << r.norm()
       << " after " << opts.max_iter << " iterations";
    fail(ErrorKind::NonConvergence, os.str());
}

HamiltonianValue hamiltonian(const LagrangianModel& model, const Vec& x, const Vec& z,
                             const EmpiricalMeasure& mu, const ControlSolveOptions& opts) {
    HamiltonianValue out;
    out.control = optimal_control(model, x, z, mu, opts);
    out.h = model.value(x, out.control, mu) - out.control.dot(z);
    return out;
}

DriverValue driver(const LagrangianModel& model, const Vec& x, const Vec& z,
                   const EmpiricalMeasure& mu, const ControlSolveOptions& opts,
                   const Vec* warm_start) {
    DriverValue out;
    out.control = optimal_control(model, x, z, mu, opts, warm_start);
    out.f = model.value(x, out.control, mu);
    Mat h = model.hess_aa(x, out.control, mu);
    Eigen::LDLT<Mat> ldlt(h);
    require(ldlt.info() == Eigen::Success, ErrorKind::EvaluatorFailure,
            "control Hessian not factorizable at the optimum");
    out.gain = ldlt.solve(Mat::Identity(h.rows(), h.cols()));
    out.grad_z = out.gain * z;
    out.grad_x = model.grad_x(x, out.control, mu) -
                 model.hess_ax(x, out.control, mu).transpose() * out.grad_z;
    return out;
}

Vec dmu_driver(const LagrangianModel& model, const DriverValue& dv, const Vec& x,
               const EmpiricalMeasure& mu, const Vec& v) {
    return model.dmu_value(x, dv.control, mu, v) -
           model.dmu_grad_a(x, dv.control, mu, v).transpose() * dv.grad_z;
}

// ---- assumption checks -----------------------------------------------------

namespace {

struct Checker {
    AssumptionReport report;
    double declared_c = 0.0;
    double slack = 1e-9;

    // Bound of the form lhs <= C * growth; feeds the empirical constant.
    void record_c(bool advisory, const std::string& item, double lhs, double growth,
                  const std::string& where) {
        if (growth <= 1e-14) return;
        report.c_hat = std::max(report.c_hat, lhs / growth);
        push(advisory, item, lhs, declared_c * growth, where);
    }

    // Bound with an arbitrary right-hand side; no constant tracking.
    void record_plain(bool advisory, const std::string& item, double lhs, double rhs,
                      const std::string& where) {
        push(advisory, item, lhs, rhs, where);
    }

  private:
    void push(bool advisory, const std::string& item, double lhs, double rhs,
              const std::string& where) {
        if (lhs <= rhs * (1.0 + slack) + 1e-12) return;
        AssumptionViolation viol{item, lhs, rhs, where};
        (advisory ? report.advisories : report.violations).push_back(viol);
    }
};

std::string describe(const Vec& x, const Vec& a) {
    std::ostringstream os;
    os << "x=(";
    for (Index i = 0; i < x.size(); ++i) os << (i ? "," : "") << x[i];
    os << ") a=(";
    for (Index i = 0; i < a.size(); ++i) os << (i ? "," : "") << a[i];
    os << ")";
    return os.str();
}

std::vector<Index> probe_points(const EmpiricalMeasure& mu) {
    Index n = mu.size();
    std::vector<Index> idx = {0, n / 2, n - 1};
    std::sort(idx.begin(), idx.end());
    idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
    return idx;
}

} // namespace

AssumptionSampleSpec default_assumption_samples(Index dim_state, Index dim_control,
                                                u64 seed) {
    AssumptionSampleSpec spec;
    auto grid = [](Index dim, const std::vector<double>& levels) {
        std::vector<Vec> pts;
        std::vector<Index> counter(static_cast<std::size_t>(dim), 0);
        while (true) {
            Vec p(dim);
            for (Index k = 0; k < dim; ++k)
                p[k] = levels[static_cast<std::size_t>(counter[static_cast<std::size_t>(k)])];
            pts.push_back(p);
            Index k = 0;
            while (k < dim) {
                auto& c = counter[static_cast<std::size_t>(k)];
                if (++c < static_cast<Index>(levels.size())) break;
                c = 0;
                ++k;
            }
            if (k == dim) break;
        }
        return pts;
    };
    std::vector<double> x_levels =
        dim_state == 1 ? std::vector<double>{-2, -1, 0, 1, 2} : std::vector<double>{-2, 0, 2};
    std::vector<double> a_levels =
        dim_control == 1
            ? std::vector<double>{-10, -5, -2, -1, -0.5, 0, 0.5, 1, 2, 5, 10}
            : std::vector<double>{-10, -2, 0, 2, 10};
    spec.x_points = grid(dim_state, x_levels);
    spec.a_points = grid(dim_control, a_levels);
    RngKey key = make_key(seed, "assumption-samples");
    const double means[3] = {-1.0, 0.0, 1.0};
    const double sds[3] = {0.5, 1.0, 1.5};
    for (int c = 0; c < 3; ++c) {
        Mat pts(64, dim_state);
        for (Index i = 0; i < pts.rows(); ++i)
            for (Index k = 0; k < dim_state; ++k)
                pts(i, k) = means[c] +
                            sds[c] * draw_normal(key, static_cast<u64>(c),
                                                 static_cast<u64>(i * dim_state + k));
        spec.measures.push_back(EmpiricalMeasure::uniform(std::move(pts)));
    }
    return spec;
}

AssumptionReport verify_assumptions(const LagrangianModel& model,
                                    const AssumptionSampleSpec& samples) {
    require(!samples.x_points.empty() && !samples.a_points.empty() &&
                !samples.measures.empty(),
            ErrorKind::ShapeMismatch, "assumption check needs nonempty sample sets");
    Index d = model.dim_state(), m = model.dim_control();
    double C = model.declared_C();
    double gamma = model.declared_gamma();
    double eta = model.declared_eta();
    Checker ck;
    ck.declared_c = C;
    ck.report.gamma_hat = std::numeric_limits<double>::infinity();
    bool fd_third = !model.has_third_aaa();
    bool fd_hess = !model.has_analytic_hessians();

    // Direction set for the third-derivative sandwich.
    std::vector<Vec> xis;
    for (Index l = 0; l < m; ++l) xis.push_back(Vec::Unit(m, l));
    xis.push_back(Vec::Constant(m, 1.0 / std::sqrt(static_cast<double>(m))));

    for (const Vec& x : samples.x_points) {
        for (const auto& mu : samples.measures) {
            Vec zero = Vec::Zero(m);
            std::string at0 = describe(x, zero);
            ck.record_c(false, "A1.1-L0", std::abs(model.value(x, zero, mu)), 1.0, at0);
            ck.record_c(false, "A1.1-gx0", model.grad_x(x, zero, mu).norm(), 1.0, at0);
            ck.record_c(false, "A1.1-ga0", model.grad_a(x, zero, mu).norm(), 1.0, at0);
            for (const Vec& a : samples.a_points) {
                std::string where = describe(x, a);
                double an = a.norm();
                double L = model.value(x, a, mu);
                Vec ga = model.grad_a(x, a, mu);
                Vec gx = model.grad_x(x, a, mu);
                Mat haa = model.hess_aa(x, a, mu);
                Eigen::SelfAdjointEigenSolver<Mat> eig(haa);
                double lo = eig.eigenvalues().minCoeff();
                double hi = eig.eigenvalues().cwiseAbs().maxCoeff();
                ck.report.gamma_hat = std::min(ck.report.gamma_hat, lo);
                // A1.2 wants gamma <= smallest eigenvalue; report the declared
                // gamma as lhs so a failure reads "declared value too large".
                if (lo < gamma * (1.0 - 1e-9) - 1e-12)
                    ck.report.violations.push_back({"A1.2", gamma, lo, where});
                ck.record_c(false, "A1.3", hi, 1.0, where);
                ck.record_c(false, "A1.4", spectral_norm(model.hess_ax(x, a, mu)),
                            1.0 + an, where);
                ck.record_c(false, "A1.5", spectral_norm(model.hess_xx(x, a, mu)),
                            1.0 + an * an, where);
                for (Index vi : probe_points(mu)) {
                    Vec v = mu.point(vi);
                    ck.record_c(false, "A1.6",
                                spectral_norm(model.dmu_grad_a(x, a, mu, v)), 1.0 + an,
                                where);
                    ck.record_c(false, "A1.7",
                                spectral_norm(model.dmu_grad_x(x, a, mu, v)),
                                1.0 + an * an, where);
                }
                // Growth consequences of the bounds above.
                ck.record_c(false, "prop.a-upper", L, 1.0 + an * an, where);
                ck.record_plain(false, "prop.a-lower", 0.5 * gamma * an * an - C, L,
                                where);
                ck.record_c(false, "prop.b", gx.norm(), 1.0 + an * an, where);
                if (an > 0.0)
                    ck.record_c(false, "prop.c", gamma * an * an - a.dot(ga), an, where);
                ck.record_c(false, "prop.d-lower", gamma * an - ga.norm(), 1.0, where);
                ck.record_c(false, "prop.d-upper", ga.norm(), 1.0 + an, where);

                // Convexity-defect sandwich along the natural directions. The
                // bound lives in the metric of the inverse control Hessian.
                Eigen::LDLT<Mat> ldlt(haa);
                if (ldlt.info() == Eigen::Success) {
                    Vec g_ga = ldlt.solve(ga);
                    for (const Vec& xi : xis) {
                        Vec g_xi = ldlt.solve(xi);
                        double t3 = model.third_aaa(x, a, mu, g_xi, g_xi, g_ga);
                        double xi2 = xi.squaredNorm();
                        ck.record_c(fd_third, "A2.1-lower", -t3, xi2, where);
                        ck.record_plain(fd_third, "A2.1-upper", t3,
                                        xi.dot(g_xi) - eta * xi2, where);
                    }
                }

                // Third mixed state/control derivative, one state direction at
                // a time; value is the largest slice norm.
                {
                    double worst = 0.0;
                    Vec xs = x;
                    for (Index j = 0; j < d; ++j) {
                        xs[j] = x[j] + kFdStep;
                        Mat up = model.hess_aa(xs, a, mu);
                        xs[j] = x[j] - kFdStep;
                        Mat dn = model.hess_aa(xs, a, mu);
                        xs[j] = x[j];
                        worst = std::max(worst,
                                         spectral_norm((up - dn) / (2.0 * kFdStep)));
                    }
                    ck.record_c(fd_hess, "A2.2", worst, 1.0, where);
                }

                // Measure derivative of the control Hessian, via the control
                // sensitivity of the first measure derivative.
                {
                    double worst = 0.0;
                    Vec v = mu.point(0);
                    Vec as = a;
                    for (Index l = 0; l < m; ++l) {
                        as[l] = a[l] + kFdStep;
                        Mat up = model.dmu_grad_a(x, as, mu, v);
                        as[l] = a[l] - kFdStep;
                        Mat dn = model.dmu_grad_a(x, as, mu, v);
                        as[l] = a[l];
                        worst = std::max(worst,
                                         spectral_norm((up - dn) / (2.0 * kFdStep)));
                    }
                    ck.record_c(fd_hess, "A2.3", worst, 1.0, where);
                }
                ++ck.report.samples_checked;
            }
        }
    }

    // Two-point Lipschitz bounds, sampled over deterministic random pairs.
    {
        std::size_t nx = samples.x_points.size(), na = samples.a_points.size(),
                    nm = samples.measures.size();
        // Pairwise transport distances between the sample measures.
        Mat w2(static_cast<Index>(nm), static_cast<Index>(nm));
        for (std::size_t i = 0; i < nm; ++i)
            for (std::size_t j = 0; j < nm; ++j)
                w2(static_cast<Index>(i), static_cast<Index>(j)) =
                    i == j ? 0.0
                           : w2_convergence_metric(samples.measures[i],
                                                   samples.measures[j], 0x2a);
        RngKey key = make_key(0x2a, "assumption-pairs");
        for (int k = 0; k < samples.pair_samples; ++k) {
            auto pick = [&](u64 slot, std::size_t nvals) {
                return static_cast<std::size_t>(
                    draw_u64(key, static_cast<u64>(k), slot) % nvals);
            };
            const Vec& x1 = samples.x_points[pick(0, nx)];
            const Vec& x2 = samples.x_points[pick(1, nx)];
            const Vec& a1 = samples.a_points[pick(2, na)];
            const Vec& a2 = samples.a_points[pick(3, na)];
            std::size_t im1 = pick(4, nm), im2 = pick(5, nm);
            const auto& mu1 = samples.measures[im1];
            const auto& mu2 = samples.measures[im2];
            Vec v1 = mu1.point(static_cast<Index>(pick(6, static_cast<std::size_t>(mu1.size()))));
            Vec v2 = mu2.point(static_cast<Index>(pick(7, static_cast<std::size_t>(mu2.size()))));
            double s = 1.0 + a1.norm() + a2.norm();
            double dx = (x1 - x2).norm(), da = (a1 - a2).norm(), dv = (v1 - v2).norm();
            double dw = w2(static_cast<Index>(im1), static_cast<Index>(im2));
            std::ostringstream os;
            os << "pair " << k;
            std::string where = os.str();
            double lhs4 = (model.dmu_value(x1, a1, mu1, v1) -
                           model.dmu_value(x2, a2, mu2, v2))
                              .norm();
            ck.record_c(false, "A2.4", lhs4, s * (s * (dx + dw + dv) + da), where);
            double lhs5 = spectral_norm(model.hess_ax(x1, a1, mu1) -
                                        model.hess_ax(x2, a2, mu2));
            ck.record_c(fd_hess, "A2.5", lhs5, s * (dx + dw) + da, where);
            double lhs6 = spectral_norm(model.dmu_grad_a(x1, a1, mu1, v1) -
                                        model.dmu_grad_a(x2, a2, mu2, v2));
            ck.record_c(fd_hess, "A2.6", lhs6, s * (dx + dw + dv) + da, where);
        }
    }
    return ck.report;
}

MonotonicityResult monotonicity_check(
    const std::function<double(const Vec&, const EmpiricalMeasure&)>& b,
    const EmpiricalMeasure& mu, const EmpiricalMeasure& mu_prime) {
    require(mu.dim() == mu_prime.dim(), ErrorKind::ShapeMismatch,
            "monotonicity check needs measures of equal dimension");
    auto delta = [&](const Vec& x) { return b(x, mu) - b(x, mu_prime); };
    std::vector<double> plus(static_cast<std::size_t>(mu.size()));
    for (Index i = 0; i < mu.size(); ++i)
        plus[static_cast<std::size_t>(i)] = mu.weight(i) * delta(mu.point(i));
    std::vector<double> minus(static_cast<std::size_t>(mu_prime.size()));
    for (Index j = 0; j < mu_prime.size(); ++j)
        minus[static_cast<std::size_t>(j)] = mu_prime.weight(j) * delta(mu_prime.point(j));
    MonotonicityResult out;
    out.value = pairwise_sum(plus) - pairwise_sum(minus);
    out.nonnegative = out.value >= -1e-9 * (1.0 + std::abs(out.value));
    return out;
}

} // namespace mfgw
