#include "mfgweak/vector_fields.hpp"

#include "mfgweak/errors.hpp"

#include <Eigen/SVD>

#include <cmath>
#include <sstream>
#include <utility>

namespace mfgw {

Mat VectorFieldSet::sigma_matrix(const Vec& x) const {
    Mat out(dim_state(), dim_noise());
    for (Index l = 0; l < dim_noise(); ++l) out.col(l) = sigma(l, x);
    return out;
}

Mat VectorFieldSet::jac_drift(const Vec& x) const {
    constexpr double h = 1e-5;
    Index d = dim_state();
    Mat out(d, d);
    Vec xs = x;
    for (Index j = 0; j < d; ++j) {
        xs[j] = x[j] + h;
        Vec up = ito_drift(*this, xs);
        xs[j] = x[j] - h;
        Vec dn = ito_drift(*this, xs);
        xs[j] = x[j];
        out.col(j) = (up - dn) / (2.0 * h);
    }
    return out;
}

Vec ito_drift(const VectorFieldSet& vfs, const Vec& x) {
    Vec b = Vec::Zero(vfs.dim_state());
    for (Index l = 0; l < vfs.dim_noise(); ++l)
        b += vfs.jac_sigma(l, x) * vfs.sigma(l, x);
    return 0.5 * b;
}

namespace {

class ConstantFields final : public VectorFieldSet {
  public:
    explicit ConstantFields(Mat sigma) : sigma_(std::move(sigma)) {
        require(sigma_.rows() > 0 && sigma_.cols() > 0, ErrorKind::Config,
                "constant field matrix must be nonempty");
    }
    Index dim_state() const override { return sigma_.rows(); }
    Index dim_noise() const override { return sigma_.cols(); }
    Vec sigma(Index l, const Vec&) const override { return sigma_.col(l); }
    Mat jac_sigma(Index, const Vec&) const override {
        return Mat::Zero(sigma_.rows(), sigma_.rows());
    }
    Mat jac_drift(const Vec&) const override {
        return Mat::Zero(sigma_.rows(), sigma_.rows());
    }
    std::string name() const override { return "constant"; }

  private:
    Mat sigma_;
};

class ScalarLinearFields final : public VectorFieldSet {
  public:
    ScalarLinearFields(double s0, double s1) : s0_(s0), s1_(s1) {}
    Index dim_state() const override { return 1; }
    Index dim_noise() const override { return 1; }
    Vec sigma(Index, const Vec& x) const override {
        return Vec::Constant(1, s0_ + s1_ * x[0]);
    }
    Mat jac_sigma(Index, const Vec&) const override { return Mat::Constant(1, 1, s1_); }
    Mat jac_drift(const Vec&) const override {
        return Mat::Constant(1, 1, 0.5 * s1_ * s1_);
    }
    std::string name() const override { return "scalar-linear"; }

  private:
    double s0_, s1_;
};

class SineFields final : public VectorFieldSet {
  public:
    SineFields(double amp, double freq, double offset)
        : amp_(amp), freq_(freq), offset_(offset) {}
    Index dim_state() const override { return 1; }
    Index dim_noise() const override { return 1; }
    Vec sigma(Index, const Vec& x) const override {
        return Vec::Constant(1, offset_ + amp_ * std::sin(freq_ * x[0]));
    }
    Mat jac_sigma(Index, const Vec& x) const override {
        return Mat::Constant(1, 1, amp_ * freq_ * std::cos(freq_ * x[0]));
    }
    Mat jac_drift(const Vec& x) const override {
        double s = std::sin(freq_ * x[0]), c = std::cos(freq_ * x[0]);
        double v = amp_ * freq_ *
                   (amp_ * freq_ * c * c - (offset_ + amp_ * s) * freq_ * s);
        return Mat::Constant(1, 1, 0.5 * v);
    }
    std::string name() const override { return "sine"; }

  private:
    double amp_, freq_, offset_;
};

class HeisenbergFields final : public VectorFieldSet {
  public:
    Index dim_state() const override { return 2; }
    Index dim_noise() const override { return 2; }
    Vec sigma(Index l, const Vec& x) const override {
        Vec out = Vec::Zero(2);
        if (l == 0)
            out[0] = 1.0;
        else
            out[1] = x[0];
        return out;
    }
    Mat jac_sigma(Index l, const Vec&) const override {
        Mat out = Mat::Zero(2, 2);
        if (l == 1) out(1, 0) = 1.0;
        return out;
    }
    Mat jac_drift(const Vec&) const override { return Mat::Zero(2, 2); }
    std::string name() const override { return "heisenberg"; }
};

} // namespace

std::shared_ptr<VectorFieldSet> make_constant_fields(Mat sigma) {
    return std::make_shared<ConstantFields>(std::move(sigma));
}

std::shared_ptr<VectorFieldSet> make_scalar_linear_fields(double s0, double s1) {
    return std::make_shared<ScalarLinearFields>(s0, s1);
}

std::shared_ptr<VectorFieldSet> make_sine_fields(double amp, double freq,
                                                 double offset) {
    return std::make_shared<SineFields>(amp, freq, offset);
}

std::shared_ptr<VectorFieldSet> make_heisenberg_fields() {
    return std::make_shared<HeisenbergFields>();
}

HormanderReport hormander_rank(const VectorFieldSet& vfs, const Vec& x, int depth) {
    require(depth >= 0, ErrorKind::Config, "bracket depth must be nonnegative");
    require(depth <= 4, ErrorKind::DepthUnsupported,
            "bracket depth beyond 4 not supported (nested differencing degrades)");
    Index d = vfs.dim_state();
    using Field = std::function<Vec(const Vec&)>;

    // Numeric Jacobian of a computed bracket field.
    constexpr double h = 1e-4;
    auto jac_of = [d, h](const Field& f, const Vec& at) {
        Mat out(d, d);
        Vec xs = at;
        for (Index j = 0; j < d; ++j) {
            xs[j] = at[j] + h;
            Vec up = f(xs);
            xs[j] = at[j] - h;
            Vec dn = f(xs);
            xs[j] = at[j];
            out.col(j) = (up - dn) / (2.0 * h);
        }
        return out;
    };

    std::vector<Field> base;
    for (Index l = 0; l < vfs.dim_noise(); ++l)
        base.push_back([&vfs, l](const Vec& p) { return vfs.sigma(l, p); });

    std::vector<Field> level = base;
    std::vector<Vec> collected;
    for (const Field& f : level) collected.push_back(f(x));

    for (int k = 1; k <= depth; ++k) {
        std::vector<Field> next;
        for (const Field& g : level) {
            for (Index l = 0; l < vfs.dim_noise(); ++l) {
                // [sigma_l, g] = Jac(g) sigma_l - Jac(sigma_l) g.  The first
                // level uses the exact field Jacobians; deeper levels
                // difference the computed bracket.
                Field bracket;
                if (k == 1) {
                    Index gl = static_cast<Index>(&g - level.data());
                    bracket = [&vfs, gl, l](const Vec& p) -> Vec {
                        return vfs.jac_sigma(gl, p) * vfs.sigma(l, p) -
                               vfs.jac_sigma(l, p) * vfs.sigma(gl, p);
                    };
                } else {
                    bracket = [&vfs, g, l, jac_of](const Vec& p) -> Vec {
                        return jac_of(g, p) * vfs.sigma(l, p) -
                               vfs.jac_sigma(l, p) * g(p);
                    };
                }
                collected.push_back(bracket(x));
                next.push_back(std::move(bracket));
            }
        }
        level = std::move(next);
    }

    HormanderReport report;
    report.depth = depth;
    report.vectors.resize(d, static_cast<Index>(collected.size()));
    for (Index c = 0; c < report.vectors.cols(); ++c)
        report.vectors.col(c) = collected[static_cast<std::size_t>(c)];
    Eigen::JacobiSVD<Mat> svd(report.vectors);
    report.singular_values = svd.singularValues();
    double top = report.singular_values.size() ? report.singular_values[0] : 0.0;
    report.rank = 0;
    for (Index i = 0; i < report.singular_values.size(); ++i)
        if (report.singular_values[i] > 1e-8 * top) ++report.rank;
    if (top == 0.0) report.rank = 0;
    return report;
}

} // namespace mfgw
