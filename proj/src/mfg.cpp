#include "mfgweak/mfg.hpp"

#include "mfgweak/errors.hpp"
#include "mfgweak/rng.hpp"
#include "mfgweak/util.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <memory>
#include <sstream>
#include <utility>
#include <vector>

namespace mfgw {

namespace {

void check_controls(const PathEnsemble& paths, const std::vector<Mat>& controls) {
    require(static_cast<Index>(controls.size()) == paths.grid.steps,
            ErrorKind::ShapeMismatch, "need one control matrix per time step");
    for (const Mat& c : controls)
        require(c.rows() == paths.particles && c.cols() == paths.noise_dim,
                ErrorKind::ShapeMismatch,
                "control matrices must be particles x noise_dim");
}

void check_flow(const PathEnsemble& paths, const LawFlow& flow) {
    require(flow.grid.steps == paths.grid.steps &&
                static_cast<Index>(flow.nodes.size()) == paths.grid.nodes(),
            ErrorKind::ShapeMismatch, "law flow does not match the ensemble grid");
}

// Per-particle unweighted cost  g(X_N, mu_N) + sum_n L(X_n, a_n, mu_n) dt.
Vec per_particle_cost(const PathEnsemble& paths, const std::vector<Mat>& controls,
                      const LawFlow& flow, const LagrangianModel* model,
                      const TerminalCondition& g, int threads) {
    check_flow(paths, flow);
    require(static_cast<bool>(g.value), ErrorKind::Config,
            "terminal condition has no value evaluator");
    if (model) {
        check_controls(paths, controls);
        require(paths.full_storage(), ErrorKind::ModeUnsupported,
                "running cost needs every node retained (store_stride 1)");
    }
    Index np = paths.particles, steps = paths.grid.steps;
    double dt = paths.dt();
    const EmpiricalMeasure& muT = flow.nodes.back();
    const Mat& xT = paths.states(steps);
    Vec cost(np);
    parallel_for_checked(0, np, threads, [&](Index i) {
        double acc = 0.0;
        if (model) {
            for (Index n = 0; n < steps; ++n) {
                acc += model->value(paths.states(n).row(i).transpose(),
                                    controls[static_cast<std::size_t>(n)]
                                        .row(i)
                                        .transpose(),
                                    flow.nodes[static_cast<std::size_t>(n)]) *
                       dt;
            }
        }
        cost[i] = acc + g.value(xT.row(i).transpose(), muT);
    });
    return cost;
}

} // namespace

GirsanovWeights girsanov_weights(const PathEnsemble& paths,
                                 const std::vector<Mat>& controls, int threads) {
    check_controls(paths, controls);
    Index np = paths.particles, steps = paths.grid.steps;
    double dt = paths.dt();

    GirsanovWeights gw;
    gw.logM.resize(np, steps + 1);
    gw.M.resize(np, steps + 1);
    std::vector<double> half_energy(static_cast<std::size_t>(np));
    parallel_for(0, np, threads, [&](Index i) {
        double acc = 0.0, energy = 0.0;
        gw.logM(i, 0) = 0.0;
        gw.M(i, 0) = 1.0;
        for (Index k = 0; k < steps; ++k) {
            Vec a = controls[static_cast<std::size_t>(k)].row(i).transpose();
            double a2 = a.squaredNorm();
            acc -= a.dot(paths.increments(i, k)) + 0.5 * a2 * dt;
            energy += 0.5 * a2 * dt;
            gw.logM(i, k + 1) = acc;
            gw.M(i, k + 1) = std::exp(acc);
        }
        half_energy[static_cast<std::size_t>(i)] = energy;
    });
    require(gw.M.allFinite(), ErrorKind::NonFinite,
            "change-of-measure weights overflowed; the control process is too "
            "large for this horizon");

    gw.mean_per_node.resize(steps + 1);
    gw.se_per_node.resize(steps + 1);
    std::vector<double> col(static_cast<std::size_t>(np));
    for (Index n = 0; n <= steps; ++n) {
        for (Index i = 0; i < np; ++i) col[static_cast<std::size_t>(i)] = gw.M(i, n);
        gw.mean_per_node[n] = pairwise_mean(col);
        gw.se_per_node[n] =
            std::sqrt(pairwise_variance(col) / static_cast<double>(np));
    }

    std::vector<double> ex(static_cast<std::size_t>(np));
    for (Index i = 0; i < np; ++i)
        ex[static_cast<std::size_t>(i)] = std::exp(half_energy[static_cast<std::size_t>(i)]);
    gw.novikov_stat = pairwise_mean(ex);
    gw.novikov_flagged = !(gw.novikov_stat <= 1e6);
    return gw;
}

double weak_cost(const PathEnsemble& paths, const GirsanovWeights& weights,
                 const std::vector<Mat>& controls, const LawFlow& flow,
                 const LagrangianModel* model, const TerminalCondition& g,
                 int threads) {
    require(weights.M.rows() == paths.particles &&
                weights.M.cols() == paths.grid.nodes(),
            ErrorKind::ShapeMismatch, "weights do not match the ensemble");
    Vec cost = per_particle_cost(paths, controls, flow, model, g, threads);
    Index np = paths.particles, steps = paths.grid.steps;
    std::vector<double> wc(static_cast<std::size_t>(np));
    for (Index i = 0; i < np; ++i)
        wc[static_cast<std::size_t>(i)] = weights.M(i, steps) * cost[i];
    return pairwise_mean(wc);
}

CostProbe perturb_cost_probe(const PathEnsemble& paths,
                             const std::vector<Mat>& controls, double delta,
                             const LawFlow& flow, const LagrangianModel& model,
                             const TerminalCondition& g, int threads) {
    check_controls(paths, controls);
    std::vector<Mat> shifted = controls;
    for (Mat& c : shifted) c.array() += delta;

    GirsanovWeights w0 = girsanov_weights(paths, controls, threads);
    GirsanovWeights w1 = girsanov_weights(paths, shifted, threads);
    Vec c0 = per_particle_cost(paths, controls, flow, &model, g, threads);
    Vec c1 = per_particle_cost(paths, shifted, flow, &model, g, threads);

    Index np = paths.particles, steps = paths.grid.steps;
    std::vector<double> base(static_cast<std::size_t>(np)),
        pert(static_cast<std::size_t>(np)), diff(static_cast<std::size_t>(np));
    for (Index i = 0; i < np; ++i) {
        std::size_t s = static_cast<std::size_t>(i);
        base[s] = w0.M(i, steps) * c0[i];
        pert[s] = w1.M(i, steps) * c1[i];
        diff[s] = pert[s] - base[s];
    }
    CostProbe probe;
    probe.base_cost = pairwise_mean(base);
    probe.perturbed_cost = pairwise_mean(pert);
    probe.diff = pairwise_mean(diff);
    probe.diff_se = std::sqrt(pairwise_variance(diff) / static_cast<double>(np));
    return probe;
}

LawFlow unweighted_flow(const std::shared_ptr<const PathEnsemble>& paths) {
    require(static_cast<bool>(paths), ErrorKind::Config, "no ensemble supplied");
    require(paths->full_storage(), ErrorKind::ModeUnsupported,
            "law flow needs every node retained (store_stride 1)");
    LawFlow flow;
    flow.grid = paths->grid;
    flow.nodes.reserve(static_cast<std::size_t>(paths->grid.nodes()));
    for (Index n = 0; n < paths->grid.nodes(); ++n) {
        std::shared_ptr<const Mat> pts(paths, &paths->states(n));
        flow.nodes.push_back(EmpiricalMeasure::uniform(std::move(pts)));
    }
    return flow;
}

namespace {

LawFlow weighted_flow(const std::vector<std::shared_ptr<const Mat>>& supports,
                      const std::vector<Vec>& weights, const TimeGrid& grid) {
    LawFlow flow;
    flow.grid = grid;
    flow.nodes.reserve(supports.size());
    for (std::size_t n = 0; n < supports.size(); ++n)
        flow.nodes.push_back(EmpiricalMeasure::weighted(supports[n], weights[n]));
    return flow;
}

std::vector<Vec> starting_weights(const PathEnsemble& paths,
                                  const EquilibriumOptions& opts) {
    Index np = paths.particles, d = paths.dim;
    std::size_t nodes = static_cast<std::size_t>(paths.grid.nodes());
    std::vector<Vec> w(nodes);
    switch (opts.init_flow) {
    case InitFlowKind::Uniform:
        for (auto& v : w) v = Vec::Constant(np, 1.0 / static_cast<double>(np));
        break;
    case InitFlowKind::Point: {
        require(opts.init_point.size() == d, ErrorKind::Config,
                "point start needs a target of the state dimension");
        for (std::size_t n = 0; n < nodes; ++n) {
            const Mat& x = paths.states(static_cast<Index>(n));
            Index best = 0;
            double bd = (x.row(0).transpose() - opts.init_point).squaredNorm();
            for (Index i = 1; i < np; ++i) {
                double di = (x.row(i).transpose() - opts.init_point).squaredNorm();
                if (di < bd) { bd = di; best = i; }
            }
            w[n] = Vec::Zero(np);
            w[n][best] = 1.0;
        }
        break;
    }
    case InitFlowKind::Gaussian: {
        require(opts.init_point.size() == d && opts.init_sd.size() == d,
                ErrorKind::Config,
                "gaussian start needs mean and sd of the state dimension");
        require((opts.init_sd.array() > 0.0).all(), ErrorKind::Config,
                "gaussian start spread must be positive");
        for (std::size_t n = 0; n < nodes; ++n) {
            const Mat& x = paths.states(static_cast<Index>(n));
            Vec v(np);
            for (Index i = 0; i < np; ++i) {
                Vec r = (x.row(i).transpose() - opts.init_point).array() /
                        opts.init_sd.array();
                v[i] = std::exp(-0.5 * r.squaredNorm());
            }
            double total = v.sum();
            require(total > 0.0, ErrorKind::Config,
                    "gaussian start weights vanished on this support; widen sd");
            w[n] = v / total;
        }
        break;
    }
    }
    return w;
}

// Candidate weights of one fixed-point step: the tilt at the current controls
// (or flat weights in untilted mode), blended into the current weights.
std::vector<Vec> damped_update(const std::vector<Vec>& cur,
                               const GirsanovWeights& gw, MeasureMode mode,
                               double theta, Index np) {
    std::vector<Vec> next(cur.size());
    for (std::size_t n = 0; n < cur.size(); ++n) {
        Vec cand;
        if (mode == MeasureMode::Tilted) {
            cand = gw.M.col(static_cast<Index>(n));
            cand /= cand.sum();
        } else {
            cand = Vec::Constant(np, 1.0 / static_cast<double>(np));
        }
        next[n] = (1.0 - theta) * cur[n] + theta * cand;
    }
    return next;
}

double flow_distance(const LawFlow& a, const LawFlow& b, u64 metric_seed) {
    double worst = 0.0;
    for (std::size_t n = 0; n < a.nodes.size(); ++n)
        worst = std::max(worst,
                         w2_convergence_metric(a.nodes[n], b.nodes[n], metric_seed));
    return worst;
}

} // namespace

EquilibriumResult solve_equilibrium(const LagrangianModel& model,
                                    const VectorFieldSet& vfs,
                                    const InitialCondition& init,
                                    const TimeGrid& grid,
                                    const TerminalCondition& g,
                                    const EquilibriumOptions& opts) {
    require(opts.particles > 0, ErrorKind::Config, "particle count must be positive");
    require(opts.damping > 0.0 && opts.damping <= 1.0, ErrorKind::Config,
            "damping must lie in (0, 1]");
    require(opts.tol > 0.0, ErrorKind::Config, "stopping tolerance must be positive");
    require(opts.max_iter >= 1, ErrorKind::Config, "need at least one iteration");
    require(model.dim_state() == vfs.dim_state() &&
                model.dim_control() == vfs.dim_noise(),
            ErrorKind::ShapeMismatch,
            "model dimensions do not match the vector fields");

    if (!opts.allow_assumption_violations) {
        AssumptionReport report = verify_assumptions(
            model, default_assumption_samples(model.dim_state(), model.dim_control()));
        if (!report.passed()) {
            std::ostringstream os;
            os << "model fails its declared bounds (first: "
               << report.violations.front().item
               << "); fix the declaration or set allow_assumption_violations";
            fail(ErrorKind::Config, os.str());
        }
    }

    SimulateOptions sim;
    sim.grid = grid;
    sim.particles = opts.particles;
    sim.seed = opts.seed;
    sim.store_stride = 1;
    sim.threads = opts.threads;
    auto paths = std::make_shared<const PathEnsemble>(
        simulate_forward(vfs, init, sim));

    std::vector<std::shared_ptr<const Mat>> supports;
    supports.reserve(static_cast<std::size_t>(grid.nodes()));
    for (Index n = 0; n < grid.nodes(); ++n)
        supports.emplace_back(paths, &paths->states(n));

    EquilibriumResult res;
    res.paths = paths;
    res.measure_mode = opts.measure_mode;

    std::vector<Vec> cur_w = starting_weights(*paths, opts);
    LawFlow flow = weighted_flow(supports, cur_w, grid);

    BsdeOptions bopts = opts.bsde;
    bopts.threads = opts.threads;
    std::vector<Mat> prev_controls;

    bool converged = false;
    for (int iter = 1; iter <= opts.max_iter; ++iter) {
        bopts.control_warm_start = prev_controls.empty() ? nullptr : &prev_controls;
        BsdeSolution sol = solve_backward(*paths, &model, flow, g, bopts);
        GirsanovWeights gw = girsanov_weights(*paths, sol.control, opts.threads);
        prev_controls = std::move(sol.control);

        std::vector<Vec> next_w = damped_update(cur_w, gw, opts.measure_mode,
                                                opts.damping, opts.particles);
        LawFlow next = weighted_flow(supports, next_w, grid);

        double residual = flow_distance(flow, next, opts.metric_seed);
        res.residual_history.push_back(residual);

        Index cap = std::min<Index>(512, opts.particles);
        EmpiricalMeasure a =
            resample_uniform(flow.nodes.back(), cap, opts.metric_seed, 1);
        EmpiricalMeasure b =
            resample_uniform(next.nodes.back(), cap, opts.metric_seed, 2);
        res.coupling_checks.push_back(coupling_bound_check(a.points(), b.points()));

        cur_w = std::move(next_w);
        flow = std::move(next);
        res.iterations = iter;
        if (residual < opts.tol) {
            converged = true;
            break;
        }
    }

    if (!converged) {
        std::ostringstream os;
        os << "no fixed point within " << opts.max_iter
           << " iterations (tol " << opts.tol << "); residuals:";
        os << std::setprecision(3);
        for (double r : res.residual_history) os << ' ' << r;
        fail(ErrorKind::NonConvergence, os.str());
    }

    // One further solve on the converged flow: it provides the reported
    // value/control processes and, through its damped step, a residual that
    // certifies the fixed point without moving it.
    bopts.control_warm_start = prev_controls.empty() ? nullptr : &prev_controls;
    res.solution = solve_backward(*paths, &model, flow, g, bopts);
    res.weights = girsanov_weights(*paths, res.solution.control, opts.threads);
    std::vector<Vec> extra_w = damped_update(cur_w, res.weights, opts.measure_mode,
                                             opts.damping, opts.particles);
    LawFlow extra = weighted_flow(supports, extra_w, grid);
    res.extra_step_residual = flow_distance(flow, extra, opts.metric_seed);
    res.flow = std::move(flow);
    res.converged = true;
    return res;
}

ConsistencyResult strong_weak_consistency(
    const LagrangianModel* model, const VectorFieldSet& vfs,
    const InitialCondition& init, const TimeGrid& grid, Index particles, u64 seed,
    const std::function<Vec(const Vec&)>& alpha, const TerminalCondition& g,
    int threads) {
    require(static_cast<bool>(alpha), ErrorKind::Config, "no control rule supplied");

    SimulateOptions sim;
    sim.grid = grid;
    sim.particles = particles;
    sim.seed = seed;
    sim.store_stride = 1;
    sim.threads = threads;
    auto paths = std::make_shared<const PathEnsemble>(
        simulate_forward(vfs, init, sim));

    Index np = particles, d = vfs.dim_state(), m = vfs.dim_noise(),
          steps = grid.steps;
    double dt = grid.dt();

    std::vector<Mat> controls(static_cast<std::size_t>(steps), Mat(np, m));
    for (Index n = 0; n < steps; ++n) {
        const Mat& x = paths->states(n);
        Mat& c = controls[static_cast<std::size_t>(n)];
        parallel_for_checked(0, np, threads, [&](Index i) {
            Vec a = alpha(x.row(i).transpose());
            require(a.size() == m, ErrorKind::ShapeMismatch,
                    "control rule must return a noise-dimension vector");
            c.row(i) = a.transpose();
        });
    }

    // The weight emulating drift b + sigma a is the tilt of the negated
    // control: the solver's convention removes the drift it is given.
    std::vector<Mat> negated = controls;
    for (Mat& c : negated) c *= -1.0;
    GirsanovWeights gw = girsanov_weights(*paths, negated, threads);

    LawFlow flowU = unweighted_flow(paths);
    Vec cost = per_particle_cost(*paths, controls, flowU, model, g, threads);
    std::vector<double> wc(static_cast<std::size_t>(np));
    for (Index i = 0; i < np; ++i)
        wc[static_cast<std::size_t>(i)] = gw.M(i, steps) * cost[i];

    ConsistencyResult out;
    out.j_weak = pairwise_mean(wc);
    out.se_weak = std::sqrt(pairwise_variance(wc) / static_cast<double>(np));

    // Drifted dynamics on the same noise: start from the ensemble's own
    // initial states and replay its increments.
    std::vector<Mat> strong(static_cast<std::size_t>(grid.nodes()), Mat(np, d));
    strong[0] = paths->states(0);
    for (Index n = 0; n < steps; ++n) {
        const Mat& xn = strong[static_cast<std::size_t>(n)];
        Mat& xnext = strong[static_cast<std::size_t>(n) + 1];
        parallel_for_checked(0, np, threads, [&](Index i) {
            Vec x = xn.row(i).transpose();
            Vec a = alpha(x); // the rule rides the drifted path, not the base one
            Vec drift = ito_drift(vfs, x);
            Mat sig = vfs.sigma_matrix(x);
            Vec dw = paths->increments(i, n);
            x += (drift + sig * a) * dt + sig * dw;
            require(x.allFinite(), ErrorKind::NonFinite,
                    "drifted path left the finite range");
            xnext.row(i) = x.transpose();
        });
    }

    LawFlow flowS;
    flowS.grid = grid;
    for (auto& block : strong)
        flowS.nodes.push_back(EmpiricalMeasure::uniform(std::move(block)));

    const EmpiricalMeasure& muT = flowS.nodes.back();
    std::vector<double> sc(static_cast<std::size_t>(np));
    parallel_for_checked(0, np, threads, [&](Index i) {
        double acc = 0.0;
        if (model) {
            for (Index n = 0; n < steps; ++n) {
                Vec x = flowS.nodes[static_cast<std::size_t>(n)].point(i);
                acc += model->value(x, alpha(x),
                                    flowS.nodes[static_cast<std::size_t>(n)]) *
                       dt;
            }
        }
        sc[static_cast<std::size_t>(i)] =
            acc + g.value(muT.point(i), muT);
    });

    out.j_strong = pairwise_mean(sc);
    out.se_strong = std::sqrt(pairwise_variance(sc) / static_cast<double>(np));
    out.diff = std::abs(out.j_strong - out.j_weak);
    out.pooled_se = std::hypot(out.se_strong, out.se_weak);
    return out;
}

} // namespace mfgw
