#include "mfgweak/measure.hpp"

#include "mfgweak/errors.hpp"
#include "mfgweak/util.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace mfgw {

namespace {

std::shared_ptr<const Mat> own(Mat&& m) {
    return std::make_shared<const Mat>(std::move(m));
}

} // namespace

EmpiricalMeasure EmpiricalMeasure::uniform(std::shared_ptr<const Mat> points) {
    require(points && points->rows() > 0, ErrorKind::ShapeMismatch,
            "measure needs at least one point");
    EmpiricalMeasure mu;
    mu.points_ = std::move(points);
    mu.uniform_ = true;
    mu.weights_ = Vec::Constant(mu.points_->rows(),
                                1.0 / static_cast<double>(mu.points_->rows()));
    mu.finalize();
    return mu;
}

EmpiricalMeasure EmpiricalMeasure::uniform(Mat points) {
    return uniform(own(std::move(points)));
}

EmpiricalMeasure EmpiricalMeasure::weighted(std::shared_ptr<const Mat> points,
                                            Vec weights) {
    require(points && points->rows() > 0, ErrorKind::ShapeMismatch,
            "measure needs at least one point");
    require(weights.size() == points->rows(), ErrorKind::ShapeMismatch,
            "weight count does not match point count");
    double total = 0.0;
    for (Index i = 0; i < weights.size(); ++i) {
        double w = weights[i];
        require(std::isfinite(w) && w >= 0.0, ErrorKind::NonFinite,
                "weights must be finite and nonnegative");
        total += w;
    }
    require(total > 0.0, ErrorKind::NonFinite, "weights must not all vanish");
    EmpiricalMeasure mu;
    mu.points_ = std::move(points);
    mu.weights_ = weights / total;
    mu.uniform_ = false;
    mu.finalize();
    return mu;
}

EmpiricalMeasure EmpiricalMeasure::weighted(Mat points, Vec weights) {
    return weighted(own(std::move(points)), std::move(weights));
}

void EmpiricalMeasure::finalize() {
    const Mat& p = *points_;
    Index n = p.rows(), d = p.cols();
    mean_.resize(d);
    stddev_.resize(d);
    std::vector<double> scratch(static_cast<std::size_t>(n));
    for (Index k = 0; k < d; ++k) {
        for (Index i = 0; i < n; ++i) scratch[static_cast<std::size_t>(i)] = weights_[i] * p(i, k);
        mean_[k] = pairwise_sum(scratch);
    }
    double acc = 0.0;
    for (Index k = 0; k < d; ++k) {
        for (Index i = 0; i < n; ++i) {
            double c = p(i, k) - mean_[k];
            scratch[static_cast<std::size_t>(i)] = weights_[i] * c * c;
        }
        double var = pairwise_sum(scratch);
        stddev_[k] = std::sqrt(std::max(0.0, var));
        acc += var;
    }
    spread_ = std::sqrt(std::max(0.0, acc / static_cast<double>(d)));
}

void LawFlow::validate() const {
    require(!nodes.empty(), ErrorKind::ShapeMismatch, "law flow has no nodes");
    require(static_cast<Index>(nodes.size()) == grid.nodes(), ErrorKind::ShapeMismatch,
            "law flow node count does not match grid");
    Index n = nodes.front().size();
    for (const auto& mu : nodes)
        require(mu.size() == n, ErrorKind::ShapeMismatch,
                "law flow nodes must share particle count");
}

namespace {

// Exact squared quantile distance between two weighted measures on the line:
// walk both CDFs and pair off mass greedily (the comonotone coupling, which
// is optimal in one dimension).
double w2sq_quantile_1d(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    auto sorted_support = [](const EmpiricalMeasure& m) {
        std::vector<Index> idx(static_cast<std::size_t>(m.size()));
        std::iota(idx.begin(), idx.end(), Index{0});
        const Mat& p = m.points();
        std::sort(idx.begin(), idx.end(),
                  [&p](Index a, Index b) { return p(a, 0) < p(b, 0); });
        return idx;
    };
    std::vector<Index> ia = sorted_support(mu), ib = sorted_support(nu);
    std::vector<double> terms;
    terms.reserve(ia.size() + ib.size());
    std::size_t i = 0, j = 0;
    double ra = mu.weight(ia[0]);  // mass remaining on the current atoms
    double rb = nu.weight(ib[0]);
    const double eps = 1e-15;
    while (i < ia.size() && j < ib.size()) {
        double take = std::min(ra, rb);
        double diff = mu.points()(ia[i], 0) - nu.points()(ib[j], 0);
        if (take > 0.0) terms.push_back(take * diff * diff);
        ra -= take;
        rb -= take;
        if (ra <= eps) {
            ++i;
            if (i < ia.size()) ra = mu.weight(ia[i]);
        }
        if (rb <= eps) {
            ++j;
            if (j < ib.size()) rb = nu.weight(ib[j]);
        }
    }
    return pairwise_sum(terms);
}

double w2sq_assignment(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
    Index n = mu.size();
    Mat cost(n, n);
    for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < n; ++j)
            cost(i, j) = (mu.points().row(i) - nu.points().row(j)).squaredNorm();
    double total = 0.0;
    assignment_min_cost(cost, &total);
    return total / static_cast<double>(n);
}

double w2sq_sliced(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                   const W2Options& opts) {
    Index d = mu.dim();
    RngKey key = make_key(opts.sliced_seed, "sliced-w2");
    std::vector<double> per_direction;
    per_direction.reserve(static_cast<std::size_t>(opts.sliced_directions));
    for (int k = 0; k < opts.sliced_directions; ++k) {
        Vec dir(d);
        double norm = 0.0;
        while (norm == 0.0) {
            for (Index c = 0; c < d; ++c)
                dir[c] = draw_normal(key, static_cast<u64>(k), static_cast<u64>(c));
            norm = dir.norm();
        }
        dir /= norm;
        Mat pa = mu.points() * dir;
        Mat pb = nu.points() * dir;
        EmpiricalMeasure a = mu.is_uniform()
                                 ? EmpiricalMeasure::uniform(std::move(pa))
                                 : EmpiricalMeasure::weighted(std::move(pa), mu.weights());
        EmpiricalMeasure b = nu.is_uniform()
                                 ? EmpiricalMeasure::uniform(std::move(pb))
                                 : EmpiricalMeasure::weighted(std::move(pb), nu.weights());
        per_direction.push_back(w2sq_quantile_1d(a, b));
    }
    return pairwise_mean(per_direction);
}

} // namespace

double wasserstein2(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                    const W2Options& opts) {
    require(mu.size() > 0 && nu.size() > 0, ErrorKind::ShapeMismatch,
            "wasserstein2 needs nonempty measures");
    require(mu.dim() == nu.dim(), ErrorKind::ShapeMismatch,
            "wasserstein2 dimension mismatch");
    if (opts.mode == W2Mode::Sliced)
        return std::sqrt(w2sq_sliced(mu, nu, opts));
    if (mu.dim() == 1) return std::sqrt(w2sq_quantile_1d(mu, nu));
    // Exact multi-dimensional transport is assignment-based and only defined
    // for uniform clouds of equal size within the cap.
    if (!mu.is_uniform() || !nu.is_uniform())
        fail(ErrorKind::ModeUnsupported,
             "exact multi-dimensional transport needs uniform weights; use Sliced");
    if (mu.size() != nu.size())
        fail(ErrorKind::ModeUnsupported,
             "exact multi-dimensional transport needs equal point counts; use Sliced");
    if (mu.size() > opts.exact_assignment_cap)
        fail(ErrorKind::ModeUnsupported,
             "exact multi-dimensional transport capped at " +
                 std::to_string(opts.exact_assignment_cap) + " points; use Sliced");
    return std::sqrt(w2sq_assignment(mu, nu));
}

std::vector<Index> assignment_min_cost(const Mat& cost, double* total) {
    Index n = cost.rows();
    require(cost.cols() == n && n > 0, ErrorKind::ShapeMismatch,
            "assignment needs a square nonempty cost matrix");
    const double inf = std::numeric_limits<double>::infinity();
    // Potentials method over a (n+1) x (n+1) padded problem, 1-based.
    std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
    std::vector<Index> match(static_cast<std::size_t>(n) + 1, 0); // column -> row
    std::vector<Index> way(static_cast<std::size_t>(n) + 1, 0);
    for (Index i = 1; i <= n; ++i) {
        match[0] = i;
        Index j0 = 0;
        std::vector<double> minv(static_cast<std::size_t>(n) + 1, inf);
        std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
        do {
            used[static_cast<std::size_t>(j0)] = 1;
            Index i0 = match[static_cast<std::size_t>(j0)], j1 = 0;
            double delta = inf;
            for (Index j = 1; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) continue;
                double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                             v[static_cast<std::size_t>(j)];
                if (cur < minv[static_cast<std::size_t>(j)]) {
                    minv[static_cast<std::size_t>(j)] = cur;
                    way[static_cast<std::size_t>(j)] = j0;
                }
                if (minv[static_cast<std::size_t>(j)] < delta) {
                    delta = minv[static_cast<std::size_t>(j)];
                    j1 = j;
                }
            }
            for (Index j = 0; j <= n; ++j) {
                if (used[static_cast<std::size_t>(j)]) {
                    u[static_cast<std::size_t>(match[static_cast<std::size_t>(j)])] += delta;
                    v[static_cast<std::size_t>(j)] -= delta;
                } else {
                    minv[static_cast<std::size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (match[static_cast<std::size_t>(j0)] != 0);
        do {
            Index j1 = way[static_cast<std::size_t>(j0)];
            match[static_cast<std::size_t>(j0)] = match[static_cast<std::size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    std::vector<Index> row_to_col(static_cast<std::size_t>(n));
    for (Index j = 1; j <= n; ++j)
        row_to_col[static_cast<std::size_t>(match[static_cast<std::size_t>(j)]) - 1] = j - 1;
    if (total) {
        std::vector<double> terms(static_cast<std::size_t>(n));
        for (Index i = 0; i < n; ++i)
            terms[static_cast<std::size_t>(i)] = cost(i, row_to_col[static_cast<std::size_t>(i)]);
        *total = pairwise_sum(terms);
    }
    return row_to_col;
}

EmpiricalMeasure resample_uniform(const EmpiricalMeasure& mu, Index count,
                                  u64 seed, u64 salt) {
    require(count > 0, ErrorKind::ShapeMismatch, "resample needs a positive count");
    RngKey key = make_key(seed, "subsample-w2");
    double offset = draw_uniform(key, salt, 0);
    Index n = mu.size();
    Mat out(count, mu.dim());
    // Systematic resampling: strided positions through the weight CDF.
    Index src = 0;
    double cum = mu.weight(0);
    for (Index j = 0; j < count; ++j) {
        double target = (static_cast<double>(j) + offset) / static_cast<double>(count);
        while (cum < target && src + 1 < n) {
            ++src;
            cum += mu.weight(src);
        }
        out.row(j) = mu.points().row(src);
    }
    return EmpiricalMeasure::uniform(std::move(out));
}

double w2_convergence_metric(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                             u64 subsample_seed, Index cap) {
    require(mu.dim() == nu.dim(), ErrorKind::ShapeMismatch,
            "convergence metric dimension mismatch");
    if (mu.dim() == 1) {
        W2Options opts;
        return wasserstein2(mu, nu, opts); // weighted quantile path, exact
    }
    Index count = std::min({cap, mu.size(), nu.size()});
    EmpiricalMeasure a = resample_uniform(mu, count, subsample_seed, 1);
    EmpiricalMeasure b = resample_uniform(nu, count, subsample_seed, 2);
    return wasserstein2(a, b);
}

CouplingBoundCheck coupling_bound_check(const Mat& x, const Mat& y) {
    require(x.rows() == y.rows() && x.cols() == y.cols(), ErrorKind::ShapeMismatch,
            "coupling bound needs equally shaped sample sets");
    require(x.rows() > 0, ErrorKind::ShapeMismatch, "coupling bound needs samples");
    CouplingBoundCheck out;
    std::vector<double> sq(static_cast<std::size_t>(x.rows()));
    for (Index i = 0; i < x.rows(); ++i)
        sq[static_cast<std::size_t>(i)] = (x.row(i) - y.row(i)).squaredNorm();
    out.pairing_msd = pairwise_mean(sq);
    EmpiricalMeasure mx = EmpiricalMeasure::uniform(Mat(x));
    EmpiricalMeasure my = EmpiricalMeasure::uniform(Mat(y));
    double w2;
    if (x.cols() == 1 || x.rows() <= 512) {
        w2 = wasserstein2(mx, my);
    } else {
        w2 = w2_convergence_metric(mx, my, 0x9e3779b9u);
    }
    out.w2sq = w2 * w2;
    out.ok = out.w2sq <= out.pairing_msd * (1.0 + 1e-12) + 1e-15;
    return out;
}

Vec lions_derivative(const std::function<double(const EmpiricalMeasure&)>& f,
                     const EmpiricalMeasure& mu, Index i, double h) {
    require(mu.is_uniform(), ErrorKind::ModeUnsupported,
            "particle-shift measure derivative is defined on uniform supports");
    require(i >= 0 && i < mu.size(), ErrorKind::ShapeMismatch,
            "support index out of range");
    Index n = mu.size(), d = mu.dim();
    if (h <= 0.0) {
        h = 0.1 * mu.spread() / std::sqrt(static_cast<double>(n));
        if (h <= 0.0) h = 1e-4; // degenerate cloud: fall back to an absolute step
    }
    Vec out(d);
    Mat shifted = mu.points();
    for (Index k = 0; k < d; ++k) {
        double base = shifted(i, k);
        shifted(i, k) = base + h;
        double up = f(EmpiricalMeasure::uniform(Mat(shifted)));
        shifted(i, k) = base - h;
        double down = f(EmpiricalMeasure::uniform(Mat(shifted)));
        shifted(i, k) = base;
        require(std::isfinite(up) && std::isfinite(down), ErrorKind::EvaluatorFailure,
                "functional returned non-finite value under particle shift");
        out[k] = static_cast<double>(n) * (up - down) / (2.0 * h);
    }
    return out;
}

LipschitzProbe lipschitz_probe_dmu(
    const std::function<double(const EmpiricalMeasure&)>& f,
    const std::vector<EmpiricalMeasure>& measures, double declared_c) {
    require(measures.size() >= 2, ErrorKind::ShapeMismatch,
            "lipschitz probe needs at least two measures");
    LipschitzProbe probe;
    // A few spread-out support points per measure keep the pair count modest.
    auto probe_indices = [](const EmpiricalMeasure& mu) {
        std::vector<Index> idx;
        Index n = mu.size();
        for (Index r = 0; r < std::min<Index>(3, n); ++r)
            idx.push_back(r * std::max<Index>(1, (n - 1) / 2));
        std::sort(idx.begin(), idx.end());
        idx.erase(std::unique(idx.begin(), idx.end()), idx.end());
        return idx;
    };
    for (std::size_t a = 0; a < measures.size(); ++a) {
        for (std::size_t b = a + 1; b < measures.size(); ++b) {
            double w2 = w2_convergence_metric(measures[a], measures[b], 0x10c);
            for (Index ia : probe_indices(measures[a])) {
                Vec da = lions_derivative(f, measures[a], ia);
                for (Index ib : probe_indices(measures[b])) {
                    Vec db = lions_derivative(f, measures[b], ib);
                    double dist = w2 + (measures[a].point(ia) - measures[b].point(ib)).norm();
                    if (dist <= 1e-14) continue;
                    probe.c_hat = std::max(probe.c_hat, (da - db).norm() / dist);
                    ++probe.pairs;
                }
            }
        }
    }
    probe.flagged = probe.c_hat > 10.0 * declared_c;
    return probe;
}

void write_measure_csv(const std::string& path, const EmpiricalMeasure& mu) {
    std::ofstream out(path);
    require(out.good(), ErrorKind::Io, "cannot open for write: " + path);
    out << "weight";
    for (Index k = 0; k < mu.dim(); ++k) out << ",x" << k;
    out << "\n";
    for (Index i = 0; i < mu.size(); ++i) {
        out << format_double(mu.weight(i));
        for (Index k = 0; k < mu.dim(); ++k)
            out << "," << format_double(mu.points()(i, k));
        out << "\n";
    }
    require(out.good(), ErrorKind::Io, "write failed: " + path);
}

EmpiricalMeasure read_measure_csv(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Io, "cannot open for read: " + path);
    std::string line;
    require(static_cast<bool>(std::getline(in, line)), ErrorKind::Io,
            "empty measure file: " + path);
    Index dim = static_cast<Index>(std::count(line.begin(), line.end(), ','));
    require(dim >= 1, ErrorKind::Io, "malformed measure header: " + path);
    std::vector<double> weights;
    std::vector<double> coords;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        require(static_cast<bool>(std::getline(row, cell, ',')), ErrorKind::Io,
                "malformed measure row: " + path);
        weights.push_back(std::stod(cell));
        for (Index k = 0; k < dim; ++k) {
            require(static_cast<bool>(std::getline(row, cell, ',')), ErrorKind::Io,
                    "measure row has too few columns: " + path);
            coords.push_back(std::stod(cell));
        }
    }
    Index n = static_cast<Index>(weights.size());
    require(n > 0, ErrorKind::Io, "measure file has no rows: " + path);
    Mat points(n, dim);
    for (Index i = 0; i < n; ++i)
        for (Index k = 0; k < dim; ++k)
            points(i, k) = coords[static_cast<std::size_t>(i * dim + k)];
    Vec w = Eigen::Map<Vec>(weights.data(), n);
    bool uniform = true;
    for (Index i = 1; i < n && uniform; ++i)
        uniform = w[i] == w[0];
    if (uniform) return EmpiricalMeasure::uniform(std::move(points));
    return EmpiricalMeasure::weighted(std::move(points), std::move(w));
}

} // namespace mfgw
