#include "mfgweak/forward.hpp"

#include "mfgweak/errors.hpp"
#include "mfgweak/util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>
#include <utility>

namespace mfgw {

InitialCondition InitialCondition::at(Vec x0) {
    InitialCondition ic;
    ic.point = std::move(x0);
    return ic;
}

InitialCondition InitialCondition::gaussian(Vec mean, Vec sd) {
    InitialCondition ic;
    ic.point = std::move(mean);
    ic.sd = std::move(sd);
    require(ic.sd.size() == ic.point.size(), ErrorKind::ShapeMismatch,
            "initial spread dimension must match the mean");
    require((ic.sd.array() >= 0.0).all(), ErrorKind::Config,
            "initial spread must be nonnegative");
    return ic;
}

bool InitialCondition::deterministic() const {
    return sd.size() == 0 || (sd.array() == 0.0).all();
}

bool PathEnsemble::stores(Index node) const {
    if (node < 0 || node > grid.steps) return false;
    return node % store_stride == 0 || node == grid.steps;
}

namespace {

Index stored_slot(const PathEnsemble& p, Index node) {
    require(p.stores(node), ErrorKind::ShapeMismatch,
            "state at this node was not retained (see store_stride)");
    if (node == p.grid.steps) return static_cast<Index>(p.stored_nodes.size()) - 1;
    return node / p.store_stride;
}

} // namespace

const Mat& PathEnsemble::states(Index node) const {
    return stored[static_cast<std::size_t>(stored_slot(*this, node))];
}

Vec PathEnsemble::state(Index node, Index i) const {
    return states(node).row(i).transpose();
}

double PathEnsemble::increment(Index i, Index step, Index l) const {
    RngKey key{seed, stream_id("forward")};
    u64 ctr = static_cast<u64>(step) * static_cast<u64>(noise_dim) + static_cast<u64>(l);
    return std::sqrt(dt()) * draw_normal(key, static_cast<u64>(i), ctr);
}

Vec PathEnsemble::increments(Index i, Index step) const {
    Vec out(noise_dim);
    for (Index l = 0; l < noise_dim; ++l) out[l] = increment(i, step, l);
    return out;
}

namespace {

Vec initial_state(const InitialCondition& init, u64 seed, Index i, Index d) {
    Vec x = init.point;
    if (!init.deterministic()) {
        RngKey key = make_key(seed, "initial");
        for (Index k = 0; k < d; ++k)
            x[k] += init.sd[k] * draw_normal(key, static_cast<u64>(i),
                                             static_cast<u64>(k));
    }
    return x;
}

template <class Fn>
void for_each_particle(Index n, int threads, Fn&& fn) {
    parallel_for_checked(0, n, threads, std::forward<Fn>(fn));
}

} // namespace

PathEnsemble simulate_forward(const VectorFieldSet& vfs, const InitialCondition& init,
                              const SimulateOptions& opts) {
    Index d = vfs.dim_state(), m = vfs.dim_noise();
    require(init.point.size() == d, ErrorKind::ShapeMismatch,
            "initial point dimension must match the fields");
    require(opts.particles > 0, ErrorKind::Config, "particle count must be positive");
    require(opts.store_stride > 0, ErrorKind::Config, "store stride must be positive");

    PathEnsemble p;
    p.grid = opts.grid;
    p.dim = d;
    p.noise_dim = m;
    p.particles = opts.particles;
    p.store_stride = opts.store_stride;
    p.seed = opts.seed;
    p.scheme = opts.scheme;
    for (Index node = 0; node <= opts.grid.steps; ++node)
        if (node % opts.store_stride == 0 || node == opts.grid.steps)
            p.stored_nodes.push_back(node);
    p.stored.assign(p.stored_nodes.size(), Mat(opts.particles, d));

    double dt = opts.grid.dt();
    double sqdt = std::sqrt(dt);
    RngKey key{opts.seed, stream_id("forward")};

    for_each_particle(opts.particles, opts.threads, [&](Index i) {
        Vec x = initial_state(init, opts.seed, i, d);
        Vec dw(m);
        std::size_t slot = 0;
        auto keep = [&](Index node) {
            if (node % opts.store_stride == 0 || node == opts.grid.steps)
                p.stored[slot++].row(i) = x.transpose();
        };
        keep(0);
        for (Index n = 0; n < opts.grid.steps; ++n) {
            for (Index l = 0; l < m; ++l)
                dw[l] = sqdt * draw_normal(key, static_cast<u64>(i),
                                           static_cast<u64>(n) * static_cast<u64>(m) +
                                               static_cast<u64>(l));
            if (opts.scheme == Scheme::EulerIto) {
                Vec drift = ito_drift(vfs, x);
                Vec next = x + drift * dt;
                for (Index l = 0; l < m; ++l) next += vfs.sigma(l, x) * dw[l];
                x = next;
            } else {
                Vec pred = x;
                for (Index l = 0; l < m; ++l) pred += vfs.sigma(l, x) * dw[l];
                Vec next = x;
                for (Index l = 0; l < m; ++l)
                    next += 0.5 * (vfs.sigma(l, x) + vfs.sigma(l, pred)) * dw[l];
                x = next;
            }
            for (Index k = 0; k < d; ++k)
                if (!std::isfinite(x[k])) {
                    std::ostringstream os;
                    os << "state left the finite range at particle " << i << ", step "
                       << n << " (time step too large for these fields?)";
                    fail(ErrorKind::NonFinite, os.str());
                }
            keep(n + 1);
        }
    });
    return p;
}

Vec resimulate_with_bump(const VectorFieldSet& vfs, const PathEnsemble& paths,
                         Index particle, Index bump_step, Index bump_component,
                         double h, Index out_node) {
    require(out_node >= 0 && out_node <= paths.grid.steps, ErrorKind::ShapeMismatch,
            "output node outside the grid");
    double dt = paths.dt();
    Vec x = paths.state(0, particle);
    for (Index n = 0; n < out_node; ++n) {
        Vec dw = paths.increments(particle, n);
        if (n == bump_step) dw[bump_component] += h;
        if (paths.scheme == Scheme::EulerIto) {
            Vec next = x + ito_drift(vfs, x) * dt;
            for (Index l = 0; l < paths.noise_dim; ++l) next += vfs.sigma(l, x) * dw[l];
            x = next;
        } else {
            Vec pred = x;
            for (Index l = 0; l < paths.noise_dim; ++l) pred += vfs.sigma(l, x) * dw[l];
            Vec next = x;
            for (Index l = 0; l < paths.noise_dim; ++l)
                next += 0.5 * (vfs.sigma(l, x) + vfs.sigma(l, pred)) * dw[l];
            x = next;
        }
    }
    return x;
}

Mat TangentFlow::jac(Index node, Index i) const {
    Mat out(dim, dim);
    for (Index r = 0; r < dim; ++r)
        for (Index c = 0; c < dim; ++c) out(r, c) = J[static_cast<std::size_t>(node)](i, r * dim + c);
    return out;
}

Mat TangentFlow::jac_inv(Index node, Index i) const {
    Mat out(dim, dim);
    for (Index r = 0; r < dim; ++r)
        for (Index c = 0; c < dim; ++c)
            out(r, c) = Jinv[static_cast<std::size_t>(node)](i, r * dim + c);
    return out;
}

TangentFlow tangent_flow(const VectorFieldSet& vfs, const PathEnsemble& paths,
                         int threads) {
    require(paths.full_storage(), ErrorKind::ModeUnsupported,
            "tangent flow needs every node retained (store_stride 1)");
    require(paths.scheme == Scheme::EulerIto, ErrorKind::ModeUnsupported,
            "tangent flow is defined along the drift-corrected scheme");
    Index d = paths.dim, m = paths.noise_dim, np = paths.particles;
    Index nodes = paths.grid.steps + 1;
    double dt = paths.dt();

    TangentFlow tf;
    tf.grid = paths.grid;
    tf.particles = np;
    tf.dim = d;
    tf.J.assign(static_cast<std::size_t>(nodes), Mat(np, d * d));
    tf.Jinv.assign(static_cast<std::size_t>(nodes), Mat(np, d * d));

    std::mutex cond_gate;
    double max_cond = 0.0;

    auto put = [d](Mat& block, Index i, const Mat& v) {
        for (Index r = 0; r < d; ++r)
            for (Index c = 0; c < d; ++c) block(i, r * d + c) = v(r, c);
    };

    for_each_particle(np, threads, [&](Index i) {
        Mat J = Mat::Identity(d, d);
        Mat Jinv = Mat::Identity(d, d);
        double worst = 1.0;
        put(tf.J[0], i, J);
        put(tf.Jinv[0], i, Jinv);
        for (Index n = 0; n < paths.grid.steps; ++n) {
            Vec x = paths.state(n, i);
            Mat step = Mat::Identity(d, d) + vfs.jac_drift(x) * dt;
            for (Index l = 0; l < m; ++l)
                step += vfs.jac_sigma(l, x) * paths.increment(i, n, l);
            J = step * J;
            if (n % 16 == 15) {
                Jinv = J.inverse(); // periodic resync against drift
            } else {
                Jinv = Jinv * step.inverse();
            }
            double cond = J.norm() * Jinv.norm();
            if (!std::isfinite(cond) || cond > 1e12) {
                std::ostringstream os;
                os << "tangent flow became singular at particle " << i << ", step "
                   << n << " (condition " << cond << ")";
                fail(ErrorKind::SingularFlow, os.str());
            }
            worst = std::max(worst, cond);
            put(tf.J[static_cast<std::size_t>(n + 1)], i, J);
            put(tf.Jinv[static_cast<std::size_t>(n + 1)], i, Jinv);
        }
        std::lock_guard<std::mutex> lock(cond_gate);
        max_cond = std::max(max_cond, worst);
    });
    tf.max_condition = max_cond;
    return tf;
}

Mat malliavin_derivative(const TangentFlow& tf, const VectorFieldSet& vfs,
                         const PathEnsemble& paths, Index u_step, Index t_step,
                         Index particle) {
    require(u_step >= 0 && u_step <= paths.grid.steps && t_step >= 0 &&
                t_step <= paths.grid.steps,
            ErrorKind::ShapeMismatch, "probe nodes outside the grid");
    if (t_step < u_step) return Mat::Zero(paths.dim, paths.noise_dim);
    Vec xu = paths.state(u_step, particle);
    return tf.jac(t_step, particle) * tf.jac_inv(u_step, particle) *
           vfs.sigma_matrix(xu);
}

// ---- snapshot and CSV ------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'M', 'F', 'G', 'W', 'S', 'N', 'A', 'P'};

template <class T>
void put_raw(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get_raw(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

} // namespace

void save_snapshot(const std::string& path, const PathEnsemble& paths) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    require(os.good(), ErrorKind::Io, "cannot open snapshot for writing: " + path);
    os.write(kMagic, sizeof(kMagic));
    put_raw<std::uint32_t>(os, 1); // format version
    put_raw<double>(os, paths.grid.t0);
    put_raw<double>(os, paths.grid.horizon);
    put_raw<std::int64_t>(os, paths.grid.steps);
    put_raw<std::int64_t>(os, paths.dim);
    put_raw<std::int64_t>(os, paths.noise_dim);
    put_raw<std::int64_t>(os, paths.particles);
    put_raw<std::int64_t>(os, paths.store_stride);
    put_raw<u64>(os, paths.seed);
    put_raw<std::uint32_t>(os, paths.scheme == Scheme::EulerIto ? 0u : 1u);
    put_raw<std::int64_t>(os, static_cast<std::int64_t>(paths.stored_nodes.size()));
    for (Index node : paths.stored_nodes) put_raw<std::int64_t>(os, node);
    for (const Mat& block : paths.stored)
        os.write(reinterpret_cast<const char*>(block.data()),
                 static_cast<std::streamsize>(sizeof(double) *
                                              static_cast<std::size_t>(block.size())));
    require(os.good(), ErrorKind::Io, "snapshot write failed: " + path);
}

PathEnsemble load_snapshot(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), ErrorKind::Io, "cannot open snapshot: " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    require(is.good() && std::memcmp(magic, kMagic, sizeof(kMagic)) == 0,
            ErrorKind::Io, "not a path snapshot: " + path);
    require(get_raw<std::uint32_t>(is) == 1, ErrorKind::Io,
            "unknown snapshot format version");
    PathEnsemble p;
    double t0 = get_raw<double>(is);
    double horizon = get_raw<double>(is);
    Index steps = get_raw<std::int64_t>(is);
    p.grid = TimeGrid(t0, horizon, steps);
    p.dim = get_raw<std::int64_t>(is);
    p.noise_dim = get_raw<std::int64_t>(is);
    p.particles = get_raw<std::int64_t>(is);
    p.store_stride = get_raw<std::int64_t>(is);
    p.seed = get_raw<u64>(is);
    p.scheme = get_raw<std::uint32_t>(is) == 0 ? Scheme::EulerIto
                                               : Scheme::HeunStratonovich;
    Index count = get_raw<std::int64_t>(is);
    require(count > 0 && p.dim > 0 && p.particles > 0, ErrorKind::Io,
            "snapshot header is inconsistent");
    p.stored_nodes.resize(static_cast<std::size_t>(count));
    for (Index& node : p.stored_nodes) node = get_raw<std::int64_t>(is);
    p.stored.assign(static_cast<std::size_t>(count), Mat(p.particles, p.dim));
    for (Mat& block : p.stored)
        is.read(reinterpret_cast<char*>(block.data()),
                static_cast<std::streamsize>(sizeof(double) *
                                             static_cast<std::size_t>(block.size())));
    require(is.good(), ErrorKind::Io, "snapshot truncated: " + path);
    return p;
}

void write_ensemble_csv(const std::string& path, const PathEnsemble& paths,
                        Index max_nodes) {
    require(max_nodes > 0, ErrorKind::Config, "node budget must be positive");
    std::ofstream os(path, std::ios::trunc);
    require(os.good(), ErrorKind::Io, "cannot open CSV for writing: " + path);
    Index count = static_cast<Index>(paths.stored_nodes.size());
    Index every = (count + max_nodes - 1) / max_nodes;
    std::vector<Index> picks;
    for (Index k = 0; k < count; k += every) picks.push_back(paths.stored_nodes[static_cast<std::size_t>(k)]);
    if (picks.back() != paths.stored_nodes.back())
        picks.push_back(paths.stored_nodes.back());
    os << "particle,node,time";
    for (Index k = 0; k < paths.dim; ++k) os << ",x" << k;
    os << "\n";
    for (Index node : picks) {
        const Mat& block = paths.states(node);
        for (Index i = 0; i < paths.particles; ++i) {
            os << i << "," << node << "," << format_double(paths.grid.node(node));
            for (Index k = 0; k < paths.dim; ++k)
                os << "," << format_double(block(i, k));
            os << "\n";
        }
    }
    require(os.good(), ErrorKind::Io, "CSV write failed: " + path);
}

} // namespace mfgw
