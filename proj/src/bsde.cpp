#include "mfgweak/bsde.hpp"

#include "mfgweak/errors.hpp"
#include "mfgweak/util.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mfgw {

PolyBasis::PolyBasis(Index dim, int degree) : dim_(dim), degree_(degree) {
    require(dim > 0, ErrorKind::Config, "basis dimension must be positive");
    require(degree >= 0, ErrorKind::Config, "basis degree must be nonnegative");
    // Graded enumeration: total degree 0, 1, ..., lexicographic within a grade.
    std::vector<int> expo(static_cast<std::size_t>(dim), 0);
    std::function<void(Index, int)> emit = [&](Index pos, int budget) {
        if (pos == dim - 1) {
            expo[static_cast<std::size_t>(pos)] = budget;
            exponents_.push_back(expo);
            return;
        }
        for (int e = budget; e >= 0; --e) {
            expo[static_cast<std::size_t>(pos)] = e;
            emit(pos + 1, budget - e);
        }
        expo[static_cast<std::size_t>(pos)] = 0;
    };
    for (int total = 0; total <= degree; ++total) emit(0, total);
}

Vec PolyBasis::features(const Vec& x) const {
    Vec out(count());
    for (Index j = 0; j < count(); ++j) {
        const auto& e = exponents_[static_cast<std::size_t>(j)];
        double v = 1.0;
        for (Index k = 0; k < dim_; ++k)
            for (int p = 0; p < e[static_cast<std::size_t>(k)]; ++p) v *= x[k];
        out[j] = v;
    }
    return out;
}

Mat PolyBasis::feature_jacobian(const Vec& x) const {
    Mat out = Mat::Zero(count(), dim_);
    for (Index j = 0; j < count(); ++j) {
        const auto& e = exponents_[static_cast<std::size_t>(j)];
        for (Index k = 0; k < dim_; ++k) {
            int ek = e[static_cast<std::size_t>(k)];
            if (ek == 0) continue;
            double v = static_cast<double>(ek);
            for (int p = 0; p < ek - 1; ++p) v *= x[k];
            for (Index q = 0; q < dim_; ++q) {
                if (q == k) continue;
                for (int p = 0; p < e[static_cast<std::size_t>(q)]; ++p) v *= x[q];
            }
            out(j, k) = v;
        }
    }
    return out;
}

NodeRegression::NodeRegression(const RegressionBasis& spec, const Mat& states,
                               int threads)
    : spec_(spec), states_(states) {
    require(states.rows() > 0, ErrorKind::ShapeMismatch, "regression needs particles");
    if (spec_.kind == BasisKind::LocalKernel) {
        require(spec_.bandwidth > 0.0, ErrorKind::BandwidthInvalid,
                "kernel bandwidth must be positive");
        return;
    }
    basis_ = std::make_shared<PolyBasis>(states.cols(), spec_.degree);
    Index np = states.rows(), k = basis_->count();
    Mat raw(np, k);
    parallel_for(0, np, threads, [&](Index i) {
        raw.row(i) = basis_->features(states.row(i).transpose()).transpose();
    });
    // Per-feature standardization; a feature with no variance across the
    // cloud collapses to the zero column, which the ridge then ignores.
    center_ = Vec::Zero(k);
    scale_ = Vec::Ones(k);
    for (Index j = 1; j < k; ++j) {
        std::span<const double> col(raw.col(j).data(), static_cast<std::size_t>(np));
        double mean = pairwise_mean(col);
        double sd = std::sqrt(pairwise_variance(col));
        center_[j] = mean;
        scale_[j] = sd > 1e-300 ? sd : 1.0;
    }
    features_ = (raw.rowwise() - center_.transpose()).array().rowwise() /
                scale_.transpose().array();
    Mat gram = features_.transpose() * features_ / static_cast<double>(np) +
               spec_.ridge * Mat::Identity(k, k);
    gram_.compute(gram);
    require(gram_.info() == Eigen::Success, ErrorKind::RegressionSingular,
            "normal equations not factorizable even with ridge");
}

Vec NodeRegression::fit(const Vec& targets) const {
    require(targets.size() == states_.rows(), ErrorKind::ShapeMismatch,
            "target length must match the particle count");
    require(targets.allFinite(), ErrorKind::NonFinite,
            "regression target left the finite range");
    if (spec_.kind == BasisKind::LocalKernel) return targets;
    Vec rhs = features_.transpose() * targets / static_cast<double>(states_.rows());
    Vec beta = gram_.solve(rhs);
    require(beta.allFinite(), ErrorKind::RegressionSingular,
            "regression coefficients left the finite range");
    return beta;
}

double NodeRegression::kernel_weight(const Vec& x, Index i) const {
    double q = (states_.row(i).transpose() - x).squaredNorm();
    return std::exp(-q / (2.0 * spec_.bandwidth * spec_.bandwidth));
}

Vec NodeRegression::predict(const Vec& coeffs) const {
    if (spec_.kind == BasisKind::Polynomial) return features_ * coeffs;
    Index np = states_.rows();
    Vec out(np);
    for (Index i = 0; i < np; ++i)
        out[i] = value_at(coeffs, states_.row(i).transpose());
    return out;
}

double NodeRegression::value_at(const Vec& coeffs, const Vec& x) const {
    if (spec_.kind == BasisKind::Polynomial) {
        Vec f = (basis_->features(x) - center_).array() / scale_.array();
        return f.dot(coeffs);
    }
    double s0 = 0.0, s1 = 0.0;
    for (Index i = 0; i < states_.rows(); ++i) {
        double w = kernel_weight(x, i);
        s0 += w;
        s1 += w * coeffs[i];
    }
    require(s0 > 0.0, ErrorKind::BandwidthInvalid,
            "kernel weights vanished; bandwidth too small for this cloud");
    return s1 / s0;
}

Vec NodeRegression::gradient_at(const Vec& coeffs, const Vec& x) const {
    if (spec_.kind == BasisKind::Polynomial) {
        Mat jac = basis_->feature_jacobian(x); // raw-feature rows
        return jac.transpose() * (coeffs.array() / scale_.array()).matrix();
    }
    double h2 = spec_.bandwidth * spec_.bandwidth;
    double s0 = 0.0, s1 = 0.0;
    Vec g0 = Vec::Zero(x.size()), g1 = Vec::Zero(x.size());
    for (Index i = 0; i < states_.rows(); ++i) {
        double w = kernel_weight(x, i);
        Vec dw = w * (states_.row(i).transpose() - x) / h2;
        s0 += w;
        s1 += w * coeffs[i];
        g0 += dw;
        g1 += dw * coeffs[i];
    }
    require(s0 > 0.0, ErrorKind::BandwidthInvalid,
            "kernel weights vanished; bandwidth too small for this cloud");
    return (g1 * s0 - s1 * g0) / (s0 * s0);
}

namespace {

double rms(const Vec& v) {
    std::vector<double> sq(static_cast<std::size_t>(v.size()));
    for (Index i = 0; i < v.size(); ++i) sq[static_cast<std::size_t>(i)] = v[i] * v[i];
    return std::sqrt(pairwise_mean(sq));
}

} // namespace

BsdeSolution solve_backward(const PathEnsemble& paths, const LagrangianModel* model,
                            const LawFlow& flow, const TerminalCondition& g,
                            const BsdeOptions& opts) {
    require(paths.full_storage(), ErrorKind::ModeUnsupported,
            "backward solve needs every node retained (store_stride 1)");
    require(flow.grid.steps == paths.grid.steps, ErrorKind::ShapeMismatch,
            "law flow grid does not match the ensemble grid");
    require(static_cast<Index>(flow.nodes.size()) == paths.grid.nodes(),
            ErrorKind::ShapeMismatch, "law flow must cover every grid node");
    require(static_cast<bool>(g.value), ErrorKind::Config,
            "terminal condition has no value evaluator");
    if (model) {
        require(model->dim_state() == paths.dim, ErrorKind::ShapeMismatch,
                "model state dimension does not match the ensemble");
        require(model->dim_control() == paths.noise_dim, ErrorKind::ShapeMismatch,
                "model control dimension must match the noise dimension");
    }

    Index np = paths.particles, m = paths.noise_dim, steps = paths.grid.steps;
    double dt = paths.dt();

    BsdeSolution sol;
    sol.grid = paths.grid;
    sol.particles = np;
    sol.noise_dim = m;
    sol.Y.resize(np, steps + 1);
    sol.Z.assign(static_cast<std::size_t>(steps), Mat(np, m));
    if (model) sol.control.assign(static_cast<std::size_t>(steps), Mat(np, m));
    sol.regression_residual.assign(static_cast<std::size_t>(steps), 0.0);
    sol.truncation_radius.assign(static_cast<std::size_t>(steps), 0.0);

    {
        const Mat& xT = paths.states(steps);
        const EmpiricalMeasure& muT = flow.nodes.back();
        auto& y = sol.Y;
        parallel_for_checked(0, np, opts.threads, [&](Index i) {
            y(i, steps) = g.value(xT.row(i).transpose(), muT);
        });
        require(sol.Y.col(steps).allFinite(), ErrorKind::EvaluatorFailure,
                "terminal condition returned a non-finite value");
    }

    for (Index n = steps - 1; n >= 0; --n) {
        const Mat& x = paths.states(n);
        const EmpiricalMeasure& mu = flow.nodes[static_cast<std::size_t>(n)];
        NodeRegression reg(opts.basis, x, opts.threads);
        Vec ynext = sol.Y.col(n + 1);
        Vec ycond = reg.predict(reg.fit(ynext));
        sol.regression_residual[static_cast<std::size_t>(n)] = rms(ynext - ycond);

        Mat& z = sol.Z[static_cast<std::size_t>(n)];
        for (Index l = 0; l < m; ++l) {
            Vec target(np);
            parallel_for(0, np, opts.threads, [&](Index i) {
                target[i] = (ynext[i] - ycond[i]) * paths.increment(i, n, l) / dt;
            });
            z.col(l) = reg.predict(reg.fit(target));
        }

        if (opts.truncate_z) {
            double radius =
                opts.truncation_r0 *
                std::sqrt(std::log(1.0 + static_cast<double>(steps - n)));
            sol.truncation_radius[static_cast<std::size_t>(n)] = radius;
            for (Index i = 0; i < np; ++i) {
                double zn = z.row(i).norm();
                if (zn > radius) {
                    z.row(i) *= radius / zn;
                    ++sol.truncation_events;
                }
            }
        }

        if (model) {
            Mat& ctrl = sol.control[static_cast<std::size_t>(n)];
            // Start the minimizer from an earlier solve's control at the same
            // step when one is supplied, else from the step just handled.
            const Mat* warm = nullptr;
            if (opts.control_warm_start && opts.control_warm_start->size() ==
                                               static_cast<std::size_t>(steps)) {
                const Mat& prior = (*opts.control_warm_start)[static_cast<std::size_t>(n)];
                if (prior.rows() == np && prior.cols() == m) warm = &prior;
            }
            if (!warm && n + 1 < steps)
                warm = &sol.control[static_cast<std::size_t>(n + 1)];
            auto& y = sol.Y;
            parallel_for_checked(0, np, opts.threads, [&](Index i) {
                Vec xi = x.row(i).transpose();
                Vec zi = z.row(i).transpose();
                Vec start;
                if (warm) start = warm->row(i).transpose();
                Vec a = optimal_control(*model, xi, zi, mu, opts.control,
                                        warm ? &start : nullptr);
                ctrl.row(i) = a.transpose();
                y(i, n) = ycond[i] + model->value(xi, a, mu) * dt;
            });
        } else {
            sol.Y.col(n) = ycond;
        }

        if (!sol.Y.col(n).allFinite()) {
            std::ostringstream os;
            os << "backward value left the finite range at step " << n
               << " (reduce dt or enable z truncation)";
            fail(ErrorKind::NonFinite, os.str());
        }
    }
    return sol;
}

double bmo_estimate(const BsdeSolution& sol, const PathEnsemble& paths,
                    Index from_node) {
    require(from_node >= 0 && from_node <= sol.grid.steps, ErrorKind::ShapeMismatch,
            "bmo start node outside the grid");
    Index np = sol.particles, steps = sol.grid.steps;
    double dt = sol.grid.dt();
    Vec tail = Vec::Zero(np);
    double best = 0.0;
    for (Index n = steps - 1; n >= from_node; --n) {
        const Mat& z = sol.z_at(n);
        for (Index i = 0; i < np; ++i) tail[i] += z.row(i).squaredNorm() * dt;
        NodeRegression reg(RegressionBasis{}, paths.states(n));
        Vec fitted = reg.predict(reg.fit(tail));
        double node_val = 0.0;
        for (Index i = 0; i < np; ++i) node_val = std::max(node_val, fitted[i]);
        best = std::max(best, node_val);
    }
    return best;
}

double picard_residual(const BsdeSolution& a, const BsdeSolution& b) {
    require(a.particles == b.particles && a.grid.steps == b.grid.steps &&
                a.noise_dim == b.noise_dim,
            ErrorKind::ShapeMismatch, "solutions live on different ensembles");
    double ysup = 0.0;
    for (Index n = 0; n <= a.grid.steps; ++n)
        ysup = std::max(ysup, rms(a.Y.col(n) - b.Y.col(n)));
    double zsup = 0.0;
    for (Index n = 0; n < a.grid.steps; ++n) {
        Vec d(a.particles);
        for (Index i = 0; i < a.particles; ++i)
            d[i] = (a.z_at(n).row(i) - b.z_at(n).row(i)).norm();
        zsup = std::max(zsup, rms(d));
    }
    return ysup + zsup;
}

} // namespace mfgw
