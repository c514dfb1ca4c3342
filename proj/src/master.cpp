#include "mfgweak/master.hpp"

#include "mfgweak/errors.hpp"
#include "mfgweak/rng.hpp"
#include "mfgweak/util.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>
#include <vector>

namespace mfgw {

namespace {

double rms(const Vec& v) {
    std::vector<double> sq(static_cast<std::size_t>(v.size()));
    for (Index i = 0; i < v.size(); ++i) sq[static_cast<std::size_t>(i)] = v[i] * v[i];
    return std::sqrt(pairwise_mean(sq));
}

} // namespace

double MasterFieldEstimate::value(Index node, const Vec& x) const {
    require(node >= 0 && node < static_cast<Index>(nodes.size()),
            ErrorKind::ShapeMismatch, "field queried off the grid");
    std::size_t n = static_cast<std::size_t>(node);
    return nodes[n]->value_at(coeffs[n], x);
}

Vec MasterFieldEstimate::gradient(Index node, const Vec& x) const {
    require(node >= 0 && node < static_cast<Index>(nodes.size()),
            ErrorKind::ShapeMismatch, "field queried off the grid");
    std::size_t n = static_cast<std::size_t>(node);
    return nodes[n]->gradient_at(coeffs[n], x);
}

Mat MasterFieldEstimate::hessian(Index node, const Vec& x, double step) const {
    Index d = x.size();
    Mat h(d, d);
    for (Index k = 0; k < d; ++k) {
        Vec hi = x, lo = x;
        hi[k] += step;
        lo[k] -= step;
        h.col(k) = (gradient(node, hi) - gradient(node, lo)) / (2.0 * step);
    }
    return 0.5 * (h + h.transpose());
}

MasterFieldEstimate estimate_master_field(
    const std::shared_ptr<const PathEnsemble>& paths, const BsdeSolution& sol,
    const RegressionBasis& basis, int threads) {
    require(static_cast<bool>(paths), ErrorKind::Config, "no ensemble supplied");
    require(paths->full_storage(), ErrorKind::ModeUnsupported,
            "field estimation needs every node retained (store_stride 1)");
    require(sol.particles == paths->particles &&
                sol.Y.cols() == paths->grid.nodes(),
            ErrorKind::ShapeMismatch, "solution does not match the ensemble");

    MasterFieldEstimate u;
    u.grid = paths->grid;
    u.paths = paths;
    Index count = paths->grid.nodes();
    u.nodes.reserve(static_cast<std::size_t>(count));
    u.coeffs.reserve(static_cast<std::size_t>(count));
    u.fit_residual.reserve(static_cast<std::size_t>(count));
    for (Index n = 0; n < count; ++n) {
        auto reg = std::make_shared<NodeRegression>(basis, paths->states(n), threads);
        Vec c = reg->fit(sol.Y.col(n));
        u.fit_residual.push_back(rms(sol.Y.col(n) - reg->predict(c)));
        u.nodes.push_back(std::move(reg));
        u.coeffs.push_back(std::move(c));
    }
    return u;
}

RepresentationCheck check_z_representation(const MasterFieldEstimate& u,
                                           const BsdeSolution& sol,
                                           const PathEnsemble& paths,
                                           const VectorFieldSet& vfs,
                                           int threads) {
    require(sol.particles == paths.particles, ErrorKind::ShapeMismatch,
            "solution does not match the ensemble");
    Index np = paths.particles, steps = paths.grid.steps;
    RepresentationCheck out;
    out.rel_error.reserve(static_cast<std::size_t>(steps));
    std::vector<double> gap2(static_cast<std::size_t>(np)),
        mag2(static_cast<std::size_t>(np));
    for (Index n = 0; n < steps; ++n) {
        const Mat& x = paths.states(n);
        const Mat& z = sol.z_at(n);
        parallel_for(0, np, threads, [&](Index i) {
            Vec xi = x.row(i).transpose();
            Vec rep = vfs.sigma_matrix(xi).transpose() * u.gradient(n, xi);
            std::size_t s = static_cast<std::size_t>(i);
            gap2[s] = (z.row(i).transpose() - rep).squaredNorm();
            mag2[s] = z.row(i).squaredNorm();
        });
        double rel = std::sqrt(pairwise_mean(gap2)) /
                     (std::sqrt(pairwise_mean(mag2)) + 1e-300);
        out.rel_error.push_back(rel);
        out.worst = std::max(out.worst, rel);
    }
    return out;
}

MalliavinCheck check_malliavin_representations(
    const MasterFieldEstimate& u, const BsdeSolution& sol, const TangentFlow& tf,
    const VectorFieldSet& vfs, const PathEnsemble& paths, Index probes,
    double bump, u64 seed) {
    require(paths.grid.steps >= 2, ErrorKind::InsufficientNodes,
            "probe checks need at least two steps");
    Index np = paths.particles, m = paths.noise_dim, steps = paths.grid.steps;
    RngKey key = make_key(seed, "bump-oracle");

    std::vector<double> state_rel, value_rel;
    double causality = 0.0;
    for (Index p = 0; p < probes; ++p) {
        u64 c = static_cast<u64>(p);
        Index i = static_cast<Index>(draw_u64(key, c, 0) % static_cast<u64>(np));
        Index t = 1 + static_cast<Index>(draw_u64(key, c, 1) %
                                         static_cast<u64>(steps - 1));
        Index s = static_cast<Index>(draw_u64(key, c, 2) % static_cast<u64>(t + 1));
        Index l = static_cast<Index>(draw_u64(key, c, 3) % static_cast<u64>(m));

        Mat d_state = malliavin_derivative(tf, vfs, paths, s, t, i);
        Vec bumped = resimulate_with_bump(vfs, paths, i, s, l, bump, t);
        Vec fd = (bumped - paths.state(t, i)) / bump;
        state_rel.push_back((d_state.col(l) - fd).norm() / (fd.norm() + 1e-12));

        Mat d_equal = malliavin_derivative(tf, vfs, paths, t, t, i);
        Vec xi = paths.state(t, i);
        Vec dy = d_equal.transpose() * u.gradient(t, xi);
        Vec z = sol.z_at(t).row(i).transpose();
        value_rel.push_back((dy - z).norm() / (z.norm() + 1e-12));

        if (s < t) {
            Mat after = malliavin_derivative(tf, vfs, paths, t, s, i);
            causality = std::max(causality, after.norm());
        }
    }

    MalliavinCheck out;
    out.median_state_vs_bump = median(std::move(state_rel));
    out.median_value_vs_z = median(std::move(value_rel));
    out.max_causality_violation = causality;
    out.probes = probes;
    return out;
}

TangentBsdeSolution solve_tangent_bsde(const LagrangianModel& model,
                                       const VectorFieldSet& vfs,
                                       const InitialCondition& init,
                                       const PathEnsemble& paths,
                                       const TangentFlow& tf,
                                       const BsdeSolution& sol,
                                       const LawFlow& flow,
                                       const TerminalCondition& g,
                                       const Vec& direction,
                                       const TangentBsdeOptions& opts) {
    Index np = paths.particles, d = paths.dim, m = paths.noise_dim,
          steps = paths.grid.steps;
    double dt = paths.dt();
    require(direction.size() == d, ErrorKind::ShapeMismatch,
            "direction must have the state dimension");
    require(static_cast<bool>(g.grad_x), ErrorKind::Config,
            "terminal condition has no gradient evaluator");
    require(sol.particles == np && !sol.control.empty(), ErrorKind::ShapeMismatch,
            "need a backward solution with controls on this ensemble");
    if (opts.measure_coupling)
        require(static_cast<bool>(g.dmu), ErrorKind::Config,
                "terminal condition has no law-derivative evaluator");

    // State variations along the kept paths.
    std::vector<Mat> dX(static_cast<std::size_t>(steps) + 1, Mat(np, d));
    for (Index n = 0; n <= steps; ++n) {
        Mat& block = dX[static_cast<std::size_t>(n)];
        parallel_for(0, np, opts.threads, [&](Index i) {
            block.row(i) = (tf.jac(n, i) * direction).transpose();
        });
    }

    // Independent copy carrying the law perturbation.
    std::shared_ptr<PathEnsemble> copy;
    std::unique_ptr<TangentFlow> copy_tf;
    std::vector<Mat> dXc;
    if (opts.measure_coupling) {
        SimulateOptions cs;
        cs.grid = paths.grid;
        cs.particles = std::min(opts.copy_particles, np);
        cs.seed = paths.seed + opts.copy_seed_offset;
        cs.store_stride = 1;
        cs.threads = opts.threads;
        copy = std::make_shared<PathEnsemble>(simulate_forward(vfs, init, cs));
        copy_tf = std::make_unique<TangentFlow>(tangent_flow(vfs, *copy, opts.threads));
        dXc.assign(static_cast<std::size_t>(steps) + 1, Mat(cs.particles, d));
        for (Index n = 0; n <= steps; ++n) {
            Mat& block = dXc[static_cast<std::size_t>(n)];
            parallel_for(0, cs.particles, opts.threads, [&](Index j) {
                block.row(j) = (copy_tf->jac(n, j) * direction).transpose();
            });
        }
    }

    TangentBsdeSolution out;
    out.dY.resize(np, steps + 1);
    out.dZ.assign(static_cast<std::size_t>(steps), Mat(np, m));

    {
        const Mat& xT = paths.states(steps);
        const EmpiricalMeasure& muT = flow.nodes.back();
        const Mat& dxT = dX[static_cast<std::size_t>(steps)];
        auto& dy = out.dY;
        parallel_for_checked(0, np, opts.threads, [&](Index i) {
            Vec xi = xT.row(i).transpose();
            double v = g.grad_x(xi, muT).dot(dxT.row(i).transpose());
            if (opts.measure_coupling) {
                const Mat& xc = copy->states(steps);
                const Mat& dxc = dXc[static_cast<std::size_t>(steps)];
                double acc = 0.0;
                for (Index j = 0; j < xc.rows(); ++j)
                    acc += g.dmu(xi, muT, xc.row(j).transpose())
                               .dot(dxc.row(j).transpose());
                v += acc / static_cast<double>(xc.rows());
            }
            dy(i, steps) = v;
        });
    }

    for (Index n = steps - 1; n >= 0; --n) {
        std::size_t ns = static_cast<std::size_t>(n);
        const Mat& x = paths.states(n);
        const EmpiricalMeasure& mu = flow.nodes[ns];
        NodeRegression reg(opts.basis, x, opts.threads);
        Vec dynext = out.dY.col(n + 1);
        Vec fitted = reg.predict(reg.fit(dynext));

        Mat& dz = out.dZ[ns];
        for (Index l = 0; l < m; ++l) {
            Vec target(np);
            parallel_for(0, np, opts.threads, [&](Index i) {
                target[i] = (dynext[i] - fitted[i]) * paths.increment(i, n, l) / dt;
            });
            dz.col(l) = reg.predict(reg.fit(target));
        }

        const Mat& ctrl = sol.control[ns];
        auto& dy = out.dY;
        parallel_for_checked(0, np, opts.threads, [&](Index i) {
            Vec xi = x.row(i).transpose();
            Vec zi = sol.z_at(n).row(i).transpose();
            Vec warm = ctrl.row(i).transpose();
            DriverValue dv = driver(model, xi, zi, mu, {}, &warm);
            double rate = dv.grad_x.dot(dX[ns].row(i).transpose()) +
                          dv.grad_z.dot(dz.row(i).transpose());
            if (opts.measure_coupling) {
                const Mat& xc = copy->states(n);
                const Mat& dxc = dXc[ns];
                double acc = 0.0;
                for (Index j = 0; j < xc.rows(); ++j)
                    acc += dmu_driver(model, dv, xi, mu, xc.row(j).transpose())
                               .dot(dxc.row(j).transpose());
                rate += acc / static_cast<double>(xc.rows());
            }
            dy(i, n) = fitted[i] + rate * dt;
        });
    }

    out.dY0_mean = [&] {
        std::vector<double> col(static_cast<std::size_t>(np));
        for (Index i = 0; i < np; ++i) col[static_cast<std::size_t>(i)] = out.dY(i, 0);
        return pairwise_mean(col);
    }();
    return out;
}

MasterResidual master_equation_residual(const MasterFieldEstimate& u,
                                        const LagrangianModel* model,
                                        const VectorFieldSet& vfs,
                                        const LawFlow& flow,
                                        const MasterResidualOptions& opts) {
    require(u.grid.steps >= 2, ErrorKind::InsufficientNodes,
            "time derivative needs at least three grid nodes");
    require(static_cast<Index>(flow.nodes.size()) == u.grid.nodes(),
            ErrorKind::ShapeMismatch, "law flow does not match the field grid");
    Index np = u.paths->particles, steps = u.grid.steps;
    double dt = u.grid.dt();
    RngKey key = make_key(opts.seed, "master-probes");
    Index probes = std::min(opts.probe_count, np);

    MasterResidual out;
    std::vector<double> all_sq;
    all_sq.reserve(static_cast<std::size_t>((steps - 1) * probes));
    for (Index n = 1; n < steps; ++n) {
        const Mat& x = u.paths->states(n);
        const EmpiricalMeasure& mu = flow.nodes[static_cast<std::size_t>(n)];
        std::vector<double> sq(static_cast<std::size_t>(probes));
        parallel_for_checked(0, probes, opts.threads, [&](Index p) {
            Index i = static_cast<Index>(
                draw_u64(key, static_cast<u64>(n), static_cast<u64>(p)) %
                static_cast<u64>(np));
            Vec xi = x.row(i).transpose();
            double ddt = (u.value(n + 1, xi) - u.value(n - 1, xi)) / (2.0 * dt);
            Vec grad = u.gradient(n, xi);
            Mat hess = u.hessian(n, xi, opts.hessian_step);
            Mat sig = vfs.sigma_matrix(xi);
            double r = ddt + ito_drift(vfs, xi).dot(grad) +
                       0.5 * (sig * sig.transpose() * hess).trace();
            if (model) {
                Vec z = sig.transpose() * grad;
                Vec a = optimal_control(*model, xi, z, mu);
                r += model->value(xi, a, mu);
            }
            if (opts.dmu_field) {
                double acc = 0.0;
                for (Index j = 0; j < mu.size(); ++j) {
                    Vec v = mu.point(j);
                    acc += mu.weight(j) * ito_drift(vfs, v).dot(opts.dmu_field(n, xi, v));
                    if (opts.dv_dmu_field) {
                        Mat sv = vfs.sigma_matrix(v);
                        acc += 0.5 * mu.weight(j) *
                               (sv * sv.transpose() * opts.dv_dmu_field(n, xi, v))
                                   .trace();
                    }
                }
                r += acc;
            }
            sq[static_cast<std::size_t>(p)] = r * r;
        });
        double node_ms = pairwise_mean(sq);
        out.node_rms.push_back(std::sqrt(node_ms));
        out.linf = std::max(out.linf, std::sqrt(*std::max_element(sq.begin(), sq.end())));
        all_sq.insert(all_sq.end(), sq.begin(), sq.end());
    }
    out.rms = std::sqrt(pairwise_mean(all_sq));
    return out;
}

DensityDiagnostic density_diagnostic(const EmpiricalMeasure& mu,
                                     Index grid_points) {
    require(grid_points >= 8, ErrorKind::Config, "density grid is too coarse");
    Index np = mu.size(), d = mu.dim();
    const Mat& pts = mu.points();

    DensityDiagnostic out;
    out.grid.resize(grid_points, d);
    out.density.resize(grid_points, d);
    out.bandwidth.resize(d);
    out.min_bulk_density.resize(d);
    out.max_curvature.resize(d);

    for (Index k = 0; k < d; ++k) {
        double mean = 0.0, lo = pts(0, k), hi = pts(0, k);
        for (Index i = 0; i < np; ++i) {
            mean += mu.weight(i) * pts(i, k);
            lo = std::min(lo, pts(i, k));
            hi = std::max(hi, pts(i, k));
        }
        double var = 0.0;
        for (Index i = 0; i < np; ++i) {
            double c = pts(i, k) - mean;
            var += mu.weight(i) * c * c;
        }
        require(var > 0.0, ErrorKind::BandwidthInvalid,
                "cloud is degenerate along a coordinate; no bandwidth exists");
        double h = 1.06 * std::sqrt(var) *
                   std::pow(static_cast<double>(np), -0.2);
        out.bandwidth[k] = h;

        double a = lo - 3.0 * h, b = hi + 3.0 * h;
        double step = (b - a) / static_cast<double>(grid_points - 1);
        for (Index gp = 0; gp < grid_points; ++gp) {
            double gx = a + step * static_cast<double>(gp);
            double f = 0.0;
            for (Index i = 0; i < np; ++i) {
                double t = (gx - pts(i, k)) / h;
                f += mu.weight(i) * std::exp(-0.5 * t * t);
            }
            out.grid(gp, k) = gx;
            out.density(gp, k) = f / (h * std::sqrt(2.0 * M_PI));
        }

        // Weighted 5% / 95% coordinate quantiles bound the bulk window.
        std::vector<std::pair<double, double>> order(static_cast<std::size_t>(np));
        for (Index i = 0; i < np; ++i)
            order[static_cast<std::size_t>(i)] = {pts(i, k), mu.weight(i)};
        std::sort(order.begin(), order.end());
        double cum = 0.0, q05 = order.front().first, q95 = order.back().first;
        bool got05 = false;
        for (const auto& [xv, wv] : order) {
            cum += wv;
            if (!got05 && cum >= 0.05) { q05 = xv; got05 = true; }
            if (cum >= 0.95) { q95 = xv; break; }
        }

        double dmin = std::numeric_limits<double>::infinity();
        double curv = 0.0;
        for (Index gp = 0; gp < grid_points; ++gp) {
            double gx = out.grid(gp, k);
            if (gx >= q05 && gx <= q95)
                dmin = std::min(dmin, out.density(gp, k));
            if (gp > 0 && gp + 1 < grid_points)
                curv = std::max(curv,
                                std::abs(out.density(gp + 1, k) -
                                         2.0 * out.density(gp, k) +
                                         out.density(gp - 1, k)) /
                                    (step * step));
        }
        out.min_bulk_density[k] = std::isfinite(dmin) ? dmin : 0.0;
        out.max_curvature[k] = curv;
    }
    return out;
}

} // namespace mfgw
