#include "mfgweak/scenario.hpp"

#include "mfgweak/errors.hpp"
#include "mfgweak/util.hpp"
#include "mfgweak/version.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <utility>

namespace mfgw {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

[[noreturn]] void at_line(const std::string& origin, int line, const std::string& what) {
    std::ostringstream os;
    os << origin << ":" << line << ": " << what;
    fail(ErrorKind::Config, os.str());
}

double to_double(const std::string& origin, int line, const std::string& v) {
    try {
        std::size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        at_line(origin, line, "expected a number, got '" + v + "'");
    }
}

long long to_ll(const std::string& origin, int line, const std::string& v) {
    try {
        std::size_t used = 0;
        long long x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        at_line(origin, line, "expected an integer, got '" + v + "'");
    }
}

u64 to_u64(const std::string& origin, int line, const std::string& v) {
    try {
        std::size_t used = 0;
        unsigned long long x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return static_cast<u64>(x);
    } catch (const std::exception&) {
        at_line(origin, line, "expected an unsigned integer, got '" + v + "'");
    }
}

bool to_bool(const std::string& origin, int line, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    at_line(origin, line, "expected a boolean, got '" + v + "'");
}

Vec to_vec(const std::string& origin, int line, const std::string& v) {
    std::vector<double> vals;
    std::stringstream ss(v);
    std::string part;
    while (std::getline(ss, part, ',')) {
        part = trim(part);
        if (part.empty()) at_line(origin, line, "empty entry in list '" + v + "'");
        vals.push_back(to_double(origin, line, part));
    }
    Vec out(static_cast<Index>(vals.size()));
    for (std::size_t i = 0; i < vals.size(); ++i) out[static_cast<Index>(i)] = vals[i];
    return out;
}

} // namespace

ScenarioConfig parse_scenario(const std::string& text, const std::string& origin) {
    ScenarioConfig cfg;
    double t0 = 0.0, horizon = 1.0;
    Index steps = 50;
    bool saw_state_dim = false, saw_noise_dim = false;

    std::istringstream in(text);
    std::string raw, section;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string s = trim(raw);
        if (s.empty() || s[0] == '#' || s[0] == ';') continue;
        if (s.front() == '[') {
            if (s.back() != ']') at_line(origin, line, "unterminated section header");
            section = trim(s.substr(1, s.size() - 2));
            static const char* known[] = {"run",      "grid",        "forward",
                                          "fields",   "model",       "terminal",
                                          "bsde",     "equilibrium", "diagnostics",
                                          "output"};
            if (std::find(std::begin(known), std::end(known), section) ==
                std::end(known))
                at_line(origin, line, "unknown section [" + section + "]");
            continue;
        }
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            at_line(origin, line, "expected 'key = value', got '" + s + "'");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        if (key.empty()) at_line(origin, line, "missing key before '='");
        if (val.empty()) at_line(origin, line, "missing value for '" + key + "'");
        if (section.empty())
            at_line(origin, line, "key '" + key + "' appears before any section");

        auto unknown = [&]() {
            at_line(origin, line,
                    "unknown key '" + key + "' in section [" + section + "]");
        };

        if (section == "run") {
            if (key == "name") cfg.name = val;
            else if (key == "seed") cfg.seed = to_u64(origin, line, val);
            else if (key == "threads") cfg.threads = static_cast<int>(to_ll(origin, line, val));
            else if (key == "out") cfg.out_dir = val;
            else unknown();
        } else if (section == "grid") {
            if (key == "t0") t0 = to_double(origin, line, val);
            else if (key == "horizon") horizon = to_double(origin, line, val);
            else if (key == "steps") steps = static_cast<Index>(to_ll(origin, line, val));
            else unknown();
        } else if (section == "forward") {
            if (key == "particles") cfg.particles = static_cast<Index>(to_ll(origin, line, val));
            else if (key == "scheme") {
                if (val == "euler") cfg.scheme = Scheme::EulerIto;
                else if (val == "heun") cfg.scheme = Scheme::HeunStratonovich;
                else at_line(origin, line, "scheme must be euler or heun");
            } else if (key == "store_stride") cfg.store_stride = static_cast<Index>(to_ll(origin, line, val));
            else if (key == "x0") cfg.x0 = to_vec(origin, line, val);
            else if (key == "sd") cfg.x0_sd = to_vec(origin, line, val);
            else unknown();
        } else if (section == "fields") {
            if (key == "kind") {
                if (val == "constant") cfg.field_kind = ScenarioConfig::FieldKind::Constant;
                else if (val == "scalar_linear") cfg.field_kind = ScenarioConfig::FieldKind::ScalarLinear;
                else if (val == "sine") cfg.field_kind = ScenarioConfig::FieldKind::Sine;
                else if (val == "heisenberg") cfg.field_kind = ScenarioConfig::FieldKind::Heisenberg;
                else at_line(origin, line,
                             "field kind must be constant, scalar_linear, sine or heisenberg");
            } else if (key == "state_dim") {
                cfg.state_dim = static_cast<Index>(to_ll(origin, line, val));
                saw_state_dim = true;
            } else if (key == "noise_dim") {
                cfg.noise_dim = static_cast<Index>(to_ll(origin, line, val));
                saw_noise_dim = true;
            } else if (key == "sigma") cfg.sigma_entries = to_vec(origin, line, val);
            else if (key == "s0") cfg.s0 = to_double(origin, line, val);
            else if (key == "s1") cfg.s1 = to_double(origin, line, val);
            else if (key == "amp") cfg.amp = to_double(origin, line, val);
            else if (key == "freq") cfg.freq = to_double(origin, line, val);
            else if (key == "offset") cfg.offset = to_double(origin, line, val);
            else unknown();
        } else if (section == "model") {
            if (key == "kind") {
                if (val == "none") cfg.model_kind = ScenarioConfig::ModelKind::None;
                else if (val == "quadratic") cfg.model_kind = ScenarioConfig::ModelKind::Quadratic;
                else if (val == "quartic") cfg.model_kind = ScenarioConfig::ModelKind::Quartic;
                else at_line(origin, line, "model kind must be none, quadratic or quartic");
            } else if (key == "weight") {
                if (val == "constant") cfg.weight_kind = ScenarioConfig::WeightKind::Constant;
                else if (val == "tanh") cfg.weight_kind = ScenarioConfig::WeightKind::Tanh;
                else at_line(origin, line, "weight must be constant or tanh");
            } else if (key == "f") cfg.f_value = to_double(origin, line, val);
            else if (key == "base") cfg.tanh_base = to_double(origin, line, val);
            else if (key == "amp") cfg.tanh_amp = to_double(origin, line, val);
            else if (key == "bias") cfg.tanh_bias = to_double(origin, line, val);
            else if (key == "wx") cfg.tanh_wx = to_vec(origin, line, val);
            else if (key == "wmu") cfg.tanh_wmu = to_vec(origin, line, val);
            else if (key == "c") cfg.quartic_c = to_double(origin, line, val);
            else if (key == "gamma") cfg.quartic_gamma = to_double(origin, line, val);
            else if (key == "eta") cfg.quartic_eta = to_double(origin, line, val);
            else unknown();
        } else if (section == "terminal") {
            if (key == "kind") {
                if (val == "zero") cfg.terminal_kind = ScenarioConfig::TerminalKind::Zero;
                else if (val == "linear") cfg.terminal_kind = ScenarioConfig::TerminalKind::Linear;
                else if (val == "quadratic") cfg.terminal_kind = ScenarioConfig::TerminalKind::Quadratic;
                else if (val == "power") cfg.terminal_kind = ScenarioConfig::TerminalKind::Power;
                else if (val == "linear_mean") cfg.terminal_kind = ScenarioConfig::TerminalKind::LinearMean;
                else at_line(origin, line,
                             "terminal kind must be zero, linear, quadratic, power or linear_mean");
            } else if (key == "coeff") cfg.terminal_coeff = to_double(origin, line, val);
            else if (key == "power") cfg.terminal_power = static_cast<int>(to_ll(origin, line, val));
            else if (key == "shift") cfg.terminal_shift = to_double(origin, line, val);
            else unknown();
        } else if (section == "bsde") {
            if (key == "basis") {
                if (val == "polynomial") cfg.basis.kind = BasisKind::Polynomial;
                else if (val == "kernel") cfg.basis.kind = BasisKind::LocalKernel;
                else at_line(origin, line, "basis must be polynomial or kernel");
            } else if (key == "degree") cfg.basis.degree = static_cast<int>(to_ll(origin, line, val));
            else if (key == "bandwidth") cfg.basis.bandwidth = to_double(origin, line, val);
            else if (key == "ridge") cfg.basis.ridge = to_double(origin, line, val);
            else if (key == "truncate_z") cfg.truncate_z = to_bool(origin, line, val);
            else if (key == "truncation_r0") cfg.truncation_r0 = to_double(origin, line, val);
            else unknown();
        } else if (section == "equilibrium") {
            if (key == "damping") cfg.damping = to_double(origin, line, val);
            else if (key == "tol") cfg.tol = to_double(origin, line, val);
            else if (key == "max_iter") cfg.max_iter = static_cast<int>(to_ll(origin, line, val));
            else if (key == "measure_mode") {
                if (val == "tilted") cfg.measure_mode = MeasureMode::Tilted;
                else if (val == "untilted") cfg.measure_mode = MeasureMode::Untilted;
                else at_line(origin, line, "measure_mode must be tilted or untilted");
            } else if (key == "init") {
                if (val == "uniform") cfg.init_flow = InitFlowKind::Uniform;
                else if (val == "point") cfg.init_flow = InitFlowKind::Point;
                else if (val == "gaussian") cfg.init_flow = InitFlowKind::Gaussian;
                else at_line(origin, line, "init must be uniform, point or gaussian");
            } else if (key == "init_point") cfg.init_point = to_vec(origin, line, val);
            else if (key == "init_sd") cfg.init_sd = to_vec(origin, line, val);
            else if (key == "allow_assumption_violations")
                cfg.allow_assumption_violations = to_bool(origin, line, val);
            else unknown();
        } else if (section == "diagnostics") {
            if (key == "probes") cfg.probes = static_cast<Index>(to_ll(origin, line, val));
            else if (key == "bump") cfg.bump = to_double(origin, line, val);
            else if (key == "residual_probes") cfg.residual_probes = static_cast<Index>(to_ll(origin, line, val));
            else if (key == "density_grid") cfg.density_grid = static_cast<Index>(to_ll(origin, line, val));
            else unknown();
        } else if (section == "output") {
            if (key == "max_csv_nodes") cfg.max_csv_nodes = static_cast<Index>(to_ll(origin, line, val));
            else if (key == "snapshot") cfg.write_snapshot = to_bool(origin, line, val);
            else unknown();
        }
    }

    switch (cfg.field_kind) {
    case ScenarioConfig::FieldKind::ScalarLinear:
    case ScenarioConfig::FieldKind::Sine:
        if ((saw_state_dim && cfg.state_dim != 1) || (saw_noise_dim && cfg.noise_dim != 1))
            at_line(origin, line, "this field kind is one-dimensional");
        cfg.state_dim = cfg.noise_dim = 1;
        break;
    case ScenarioConfig::FieldKind::Heisenberg:
        if ((saw_state_dim && cfg.state_dim != 2) || (saw_noise_dim && cfg.noise_dim != 2))
            at_line(origin, line, "heisenberg fields live in two dimensions");
        cfg.state_dim = cfg.noise_dim = 2;
        break;
    case ScenarioConfig::FieldKind::Constant:
        if (cfg.sigma_entries.size() != 0 &&
            cfg.sigma_entries.size() != cfg.state_dim * cfg.noise_dim)
            at_line(origin, line, "sigma needs state_dim * noise_dim entries");
        break;
    }
    if (cfg.particles <= 0) at_line(origin, line, "particle count must be positive");
    if (steps <= 0) at_line(origin, line, "grid needs at least one step");
    if (horizon <= t0) at_line(origin, line, "grid horizon must exceed t0");
    cfg.grid = TimeGrid(t0, horizon, steps);

    if (cfg.x0.size() == 0) cfg.x0 = Vec::Zero(cfg.state_dim);
    if (cfg.x0.size() != cfg.state_dim)
        at_line(origin, line, "x0 does not have state_dim entries");
    if (cfg.x0_sd.size() != 0 && cfg.x0_sd.size() != cfg.state_dim)
        at_line(origin, line, "sd does not have state_dim entries");
    if (cfg.terminal_power < 1)
        at_line(origin, line, "terminal power must be at least 1");
    return cfg;
}

ScenarioConfig parse_scenario_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Io, "cannot read scenario file '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_scenario(buf.str(), path);
}

std::shared_ptr<VectorFieldSet> make_fields(const ScenarioConfig& cfg) {
    switch (cfg.field_kind) {
    case ScenarioConfig::FieldKind::Constant: {
        Mat sigma = Mat::Zero(cfg.state_dim, cfg.noise_dim);
        if (cfg.sigma_entries.size() == 0) {
            for (Index k = 0; k < std::min(cfg.state_dim, cfg.noise_dim); ++k)
                sigma(k, k) = 1.0;
        } else {
            for (Index r = 0; r < cfg.state_dim; ++r)
                for (Index c = 0; c < cfg.noise_dim; ++c)
                    sigma(r, c) = cfg.sigma_entries[r * cfg.noise_dim + c];
        }
        return make_constant_fields(std::move(sigma));
    }
    case ScenarioConfig::FieldKind::ScalarLinear:
        return make_scalar_linear_fields(cfg.s0, cfg.s1);
    case ScenarioConfig::FieldKind::Sine:
        return make_sine_fields(cfg.amp, cfg.freq, cfg.offset);
    case ScenarioConfig::FieldKind::Heisenberg:
        return make_heisenberg_fields();
    }
    fail(ErrorKind::Internal, "unhandled field kind");
}

std::shared_ptr<LagrangianModel> make_model(const ScenarioConfig& cfg) {
    switch (cfg.model_kind) {
    case ScenarioConfig::ModelKind::None:
        return nullptr;
    case ScenarioConfig::ModelKind::Quadratic: {
        std::shared_ptr<MeasureWeight> w;
        if (cfg.weight_kind == ScenarioConfig::WeightKind::Constant) {
            w = make_constant_weight(cfg.state_dim, cfg.f_value);
        } else {
            Vec wx = cfg.tanh_wx.size() ? cfg.tanh_wx : Vec::Zero(cfg.state_dim);
            Vec wmu = cfg.tanh_wmu.size() ? cfg.tanh_wmu : Vec::Zero(cfg.state_dim);
            require(wx.size() == cfg.state_dim && wmu.size() == cfg.state_dim,
                    ErrorKind::Config, "wx / wmu need state_dim entries");
            w = make_tanh_weight(cfg.tanh_base, cfg.tanh_amp, wx, wmu, cfg.tanh_bias);
        }
        return std::make_shared<QuadraticCostModel>(cfg.state_dim, cfg.noise_dim, w);
    }
    case ScenarioConfig::ModelKind::Quartic:
        return std::make_shared<QuarticControlCostModel>(
            cfg.state_dim, cfg.noise_dim, cfg.quartic_c, cfg.quartic_gamma,
            cfg.quartic_eta);
    }
    fail(ErrorKind::Internal, "unhandled model kind");
}

TerminalCondition make_terminal(const ScenarioConfig& cfg) {
    double c = cfg.terminal_coeff, s = cfg.terminal_shift;
    int p = cfg.terminal_power;
    TerminalCondition g;
    switch (cfg.terminal_kind) {
    case ScenarioConfig::TerminalKind::Zero:
        g.value = [](const Vec&, const EmpiricalMeasure&) { return 0.0; };
        g.grad_x = [](const Vec& x, const EmpiricalMeasure&) {
            return Vec(Vec::Zero(x.size()));
        };
        g.dmu = [](const Vec&, const EmpiricalMeasure&, const Vec& v) {
            return Vec(Vec::Zero(v.size()));
        };
        break;
    case ScenarioConfig::TerminalKind::Linear:
        g.value = [c, s](const Vec& x, const EmpiricalMeasure&) {
            return c * (x.array() - s).sum();
        };
        g.grad_x = [c](const Vec& x, const EmpiricalMeasure&) {
            return Vec(Vec::Constant(x.size(), c));
        };
        g.dmu = [](const Vec&, const EmpiricalMeasure&, const Vec& v) {
            return Vec(Vec::Zero(v.size()));
        };
        break;
    case ScenarioConfig::TerminalKind::Quadratic:
        g.value = [c, s](const Vec& x, const EmpiricalMeasure&) {
            return c * (x.array() - s).matrix().squaredNorm();
        };
        g.grad_x = [c, s](const Vec& x, const EmpiricalMeasure&) {
            return Vec(2.0 * c * (x.array() - s).matrix());
        };
        g.dmu = [](const Vec&, const EmpiricalMeasure&, const Vec& v) {
            return Vec(Vec::Zero(v.size()));
        };
        break;
    case ScenarioConfig::TerminalKind::Power:
        g.value = [c, s, p](const Vec& x, const EmpiricalMeasure&) {
            double acc = 0.0;
            for (Index k = 0; k < x.size(); ++k)
                acc += std::pow(x[k] - s, p);
            return c * acc;
        };
        g.grad_x = [c, s, p](const Vec& x, const EmpiricalMeasure&) {
            Vec out(x.size());
            for (Index k = 0; k < x.size(); ++k)
                out[k] = c * p * std::pow(x[k] - s, p - 1);
            return out;
        };
        g.dmu = [](const Vec&, const EmpiricalMeasure&, const Vec& v) {
            return Vec(Vec::Zero(v.size()));
        };
        break;
    case ScenarioConfig::TerminalKind::LinearMean:
        g.value = [c, s](const Vec& x, const EmpiricalMeasure& mu) {
            return c * (x.array() - s).matrix().dot(mu.mean());
        };
        g.grad_x = [c](const Vec&, const EmpiricalMeasure& mu) {
            return Vec(c * mu.mean());
        };
        g.dmu = [c, s](const Vec& x, const EmpiricalMeasure&, const Vec&) {
            return Vec(c * (x.array() - s).matrix());
        };
        break;
    }
    return g;
}

InitialCondition make_initial(const ScenarioConfig& cfg) {
    if (cfg.x0_sd.size() == 0 || (cfg.x0_sd.array() == 0.0).all())
        return InitialCondition::at(cfg.x0);
    return InitialCondition::gaussian(cfg.x0, cfg.x0_sd);
}

void enforce_memory_cap(double projected_bytes) {
    const char* cap = std::getenv("MFGW_MAX_MB");
    if (!cap || !*cap) return;
    char* end = nullptr;
    double mb = std::strtod(cap, &end);
    require(end && *end == '\0' && mb > 0.0, ErrorKind::Config,
            "MFGW_MAX_MB must be a positive number");
    if (projected_bytes > mb * 1e6) {
        std::ostringstream os;
        os << "projected allocation " << std::fixed
           << projected_bytes / 1e6 << " MB exceeds the MFGW_MAX_MB cap of "
           << mb << " MB; shrink particles, steps or stored nodes";
        fail(ErrorKind::Config, os.str());
    }
}

namespace {

std::string hex64(u64 v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string timestamp_utc() {
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void atomic_write(const std::string& path, const std::string& content) {
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(out.good(), ErrorKind::Io, "cannot write '" + tmp + "'");
        out << content;
        require(out.good(), ErrorKind::Io, "write to '" + tmp + "' failed");
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    require(!ec, ErrorKind::Io, "cannot move '" + tmp + "' into place");
}

void write_yz_csv(const std::string& path, const PathEnsemble& paths,
                  const BsdeSolution& sol, Index max_nodes) {
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), ErrorKind::Io, "cannot write '" + path + "'");
    Index steps = paths.grid.steps, d = paths.dim, m = paths.noise_dim;
    Index every = std::max<Index>(1, (steps + max_nodes - 1) / max_nodes);
    Index rows = std::min<Index>(paths.particles, 2000);
    out << "node,time,particle";
    for (Index k = 0; k < d; ++k) out << ",x" << k;
    out << ",y";
    for (Index l = 0; l < m; ++l) out << ",z" << l;
    out << "\n";
    for (Index n = 0; n < steps; n += every) {
        const Mat& x = paths.states(n);
        const Mat& z = sol.z_at(n);
        for (Index i = 0; i < rows; ++i) {
            out << n << ',' << format_double(paths.grid.node(n)) << ',' << i;
            for (Index k = 0; k < d; ++k) out << ',' << format_double(x(i, k));
            out << ',' << format_double(sol.Y(i, n));
            for (Index l = 0; l < m; ++l) out << ',' << format_double(z(i, l));
            out << "\n";
        }
    }
    require(out.good(), ErrorKind::Io, "write to '" + path + "' failed");
}

} // namespace

ScenarioRun::ScenarioRun(ScenarioConfig cfg) : cfg_(std::move(cfg)) {
    fields_ = make_fields(cfg_);
    model_ = make_model(cfg_);
    if (model_)
        require(model_->dim_state() == fields_->dim_state() &&
                    model_->dim_control() == fields_->dim_noise(),
                ErrorKind::ShapeMismatch,
                "model dimensions do not match the vector fields");
}

void ScenarioRun::set_seed(u64 seed) { cfg_.seed = seed; }

void ScenarioRun::set_threads(int threads) {
    require(threads >= 1, ErrorKind::Config, "thread count must be positive");
    cfg_.threads = threads;
}

void ScenarioRun::set_output_dir(const std::string& dir) {
    require(!dir.empty(), ErrorKind::Config, "output directory must not be empty");
    cfg_.out_dir = dir;
}

const BsdeSolution* ScenarioRun::solution() const {
    if (equilibrium_) return &equilibrium_->solution;
    return bsde_.get();
}

std::string ScenarioRun::artifact(const std::string& file) const {
    return (fs::path(cfg_.out_dir) / file).string();
}

void ScenarioRun::note_artifact(const std::string& file) {
    if (std::find(artifacts_.begin(), artifacts_.end(), file) == artifacts_.end())
        artifacts_.push_back(file);
}

std::string ScenarioRun::manifest_path() const { return artifact("manifest.json"); }

double ScenarioRun::summary(const std::string& field) const {
    auto it = summary_.find(field);
    return it == summary_.end() ? std::nan("") : it->second;
}

void ScenarioRun::ensure_simulated() {
    if (paths_) return;
    Index stored = cfg_.grid.steps / std::max<Index>(1, cfg_.store_stride) + 2;
    enforce_memory_cap(static_cast<double>(cfg_.particles) *
                       static_cast<double>(stored) *
                       static_cast<double>(cfg_.state_dim) * 8.0);
    SimulateOptions opts;
    opts.grid = cfg_.grid;
    opts.particles = cfg_.particles;
    opts.seed = cfg_.seed;
    opts.store_stride = cfg_.store_stride;
    opts.threads = cfg_.threads;
    opts.scheme = cfg_.scheme;
    paths_ = std::make_shared<const PathEnsemble>(
        simulate_forward(*fields_, make_initial(cfg_), opts));
}

void ScenarioRun::ensure_solved() {
    if (equilibrium_ || bsde_) return;
    stage_solve_bsde();
}

void ScenarioRun::stage_simulate() {
    ensure_simulated();
    fs::create_directories(cfg_.out_dir);
    write_ensemble_csv(artifact("paths.csv"), *paths_, cfg_.max_csv_nodes);
    note_artifact("paths.csv");
    std::shared_ptr<const Mat> term(paths_, &paths_->states(cfg_.grid.steps));
    EmpiricalMeasure mu = EmpiricalMeasure::uniform(term);
    write_measure_csv(artifact("measure_terminal.csv"), mu);
    note_artifact("measure_terminal.csv");
    if (cfg_.write_snapshot) {
        save_snapshot(artifact("paths.snapshot"), *paths_);
        note_artifact("paths.snapshot");
    }
    summary_["terminal_mean"] = mu.mean()[0];
    summary_["terminal_sd"] = mu.stddev()[0];
}

void ScenarioRun::stage_solve_bsde() {
    ensure_simulated();
    fs::create_directories(cfg_.out_dir);
    enforce_memory_cap(static_cast<double>(cfg_.particles) *
                       static_cast<double>(cfg_.grid.nodes()) *
                       static_cast<double>(1 + cfg_.noise_dim) * 8.0);
    bsde_flow_ = std::make_unique<LawFlow>(unweighted_flow(paths_));
    BsdeOptions opts;
    opts.basis = cfg_.basis;
    opts.truncate_z = cfg_.truncate_z;
    opts.truncation_r0 = cfg_.truncation_r0;
    opts.threads = cfg_.threads;
    bsde_ = std::make_unique<BsdeSolution>(solve_backward(
        *paths_, model_.get(), *bsde_flow_, make_terminal(cfg_), opts));

    write_yz_csv(artifact("yz_nodes.csv"), *paths_, *bsde_, cfg_.max_csv_nodes);
    note_artifact("yz_nodes.csv");
    {
        std::ofstream out(artifact("regression_residual.csv"), std::ios::trunc);
        require(out.good(), ErrorKind::Io, "cannot write regression_residual.csv");
        out << "step,residual\n";
        for (std::size_t n = 0; n < bsde_->regression_residual.size(); ++n)
            out << n << ',' << format_double(bsde_->regression_residual[n]) << "\n";
    }
    note_artifact("regression_residual.csv");

    std::vector<double> y0(static_cast<std::size_t>(cfg_.particles));
    for (Index i = 0; i < cfg_.particles; ++i)
        y0[static_cast<std::size_t>(i)] = bsde_->Y(i, 0);
    summary_["y0_mean"] = pairwise_mean(y0);
    double zr = 0.0;
    for (Index i = 0; i < cfg_.particles; ++i)
        zr += bsde_->z_at(0).row(i).squaredNorm();
    summary_["z0_rms"] = std::sqrt(zr / static_cast<double>(cfg_.particles));
    summary_["regression_residual_max"] =
        bsde_->regression_residual.empty()
            ? 0.0
            : *std::max_element(bsde_->regression_residual.begin(),
                                bsde_->regression_residual.end());
}

void ScenarioRun::stage_solve_mfg() {
    require(static_cast<bool>(model_), ErrorKind::Config,
            "the equilibrium stage needs a model (set [model] kind)");
    fs::create_directories(cfg_.out_dir);
    enforce_memory_cap(static_cast<double>(cfg_.particles) *
                       static_cast<double>(cfg_.grid.nodes()) *
                       static_cast<double>(cfg_.state_dim + 2 + cfg_.noise_dim) *
                       8.0);
    EquilibriumOptions opts;
    opts.particles = cfg_.particles;
    opts.seed = cfg_.seed;
    opts.damping = cfg_.damping;
    opts.tol = cfg_.tol;
    opts.max_iter = cfg_.max_iter;
    opts.measure_mode = cfg_.measure_mode;
    opts.init_flow = cfg_.init_flow;
    opts.init_point = cfg_.init_point;
    opts.init_sd = cfg_.init_sd;
    opts.bsde.basis = cfg_.basis;
    opts.bsde.truncate_z = cfg_.truncate_z;
    opts.bsde.truncation_r0 = cfg_.truncation_r0;
    opts.threads = cfg_.threads;
    opts.allow_assumption_violations = cfg_.allow_assumption_violations;
    equilibrium_ = std::make_unique<EquilibriumResult>(
        solve_equilibrium(*model_, *fields_, make_initial(cfg_), cfg_.grid,
                          make_terminal(cfg_), opts));
    paths_ = equilibrium_->paths;

    {
        std::ofstream out(artifact("residual_history.csv"), std::ios::trunc);
        require(out.good(), ErrorKind::Io, "cannot write residual_history.csv");
        out << "iteration,residual\n";
        for (std::size_t k = 0; k < equilibrium_->residual_history.size(); ++k)
            out << (k + 1) << ','
                << format_double(equilibrium_->residual_history[k]) << "\n";
    }
    note_artifact("residual_history.csv");
    write_measure_csv(artifact("measure_terminal.csv"),
                      equilibrium_->flow.nodes.back());
    note_artifact("measure_terminal.csv");
    write_yz_csv(artifact("yz_nodes.csv"), *paths_, equilibrium_->solution,
                 cfg_.max_csv_nodes);
    note_artifact("yz_nodes.csv");

    double wc = weak_cost(*paths_, equilibrium_->weights,
                          equilibrium_->solution.control, equilibrium_->flow,
                          model_.get(), make_terminal(cfg_), cfg_.threads);
    summary_["iterations"] = static_cast<double>(equilibrium_->iterations);
    summary_["converged"] = equilibrium_->converged ? 1.0 : 0.0;
    summary_["final_residual"] = equilibrium_->residual_history.back();
    summary_["extra_step_residual"] = equilibrium_->extra_step_residual;
    summary_["novikov_stat"] = equilibrium_->weights.novikov_stat;
    summary_["weak_cost"] = wc;
    summary_["terminal_mean"] = equilibrium_->flow.nodes.back().mean()[0];
}

void ScenarioRun::stage_diagnose() {
    ensure_solved();
    fs::create_directories(cfg_.out_dir);
    const BsdeSolution& sol = *solution();
    const LawFlow& flow = equilibrium_ ? equilibrium_->flow : *bsde_flow_;

    auto field = estimate_master_field(paths_, sol, cfg_.basis, cfg_.threads);
    RepresentationCheck zrep =
        check_z_representation(field, sol, *paths_, *fields_, cfg_.threads);

    TangentFlow tf = tangent_flow(*fields_, *paths_, cfg_.threads);
    MalliavinCheck mall = check_malliavin_representations(
        field, sol, tf, *fields_, *paths_, cfg_.probes, cfg_.bump, cfg_.seed);

    MasterResidualOptions ropts;
    ropts.probe_count = cfg_.residual_probes;
    ropts.seed = cfg_.seed;
    ropts.threads = cfg_.threads;
    MasterResidual resid = master_equation_residual(field, model_.get(), *fields_,
                                                    flow, ropts);

    DensityDiagnostic dens =
        density_diagnostic(flow.nodes.back(), cfg_.density_grid);

    {
        std::ofstream out(artifact("density.csv"), std::ios::trunc);
        require(out.good(), ErrorKind::Io, "cannot write density.csv");
        out << "dim,x,density\n";
        for (Index k = 0; k < dens.grid.cols(); ++k)
            for (Index gp = 0; gp < dens.grid.rows(); ++gp)
                out << k << ',' << format_double(dens.grid(gp, k)) << ','
                    << format_double(dens.density(gp, k)) << "\n";
    }
    note_artifact("density.csv");

    {
        std::ofstream out(artifact("u_slices.csv"), std::ios::trunc);
        require(out.good(), ErrorKind::Io, "cannot write u_slices.csv");
        out << "node,time,x,u,du\n";
        const EmpiricalMeasure& muT = flow.nodes.back();
        double lo = muT.mean()[0] - 3.0 * muT.spread();
        double hi = muT.mean()[0] + 3.0 * muT.spread();
        Index steps = cfg_.grid.steps;
        Index picks[] = {0, steps / 4, steps / 2, 3 * steps / 4, steps};
        for (Index n : picks) {
            for (Index j = 0; j <= 100; ++j) {
                Vec x = Vec::Constant(cfg_.state_dim,
                                      lo + (hi - lo) * static_cast<double>(j) / 100.0);
                out << n << ',' << format_double(cfg_.grid.node(n)) << ','
                    << format_double(x[0]) << ','
                    << format_double(field.value(n, x)) << ','
                    << format_double(field.gradient(n, x)[0]) << "\n";
            }
        }
    }
    note_artifact("u_slices.csv");

    summary_["z_representation_worst"] = zrep.worst;
    summary_["malliavin_state_median"] = mall.median_state_vs_bump;
    summary_["malliavin_value_median"] = mall.median_value_vs_z;
    summary_["master_residual_rms"] = resid.rms;
    summary_["density_min_bulk"] = dens.min_bulk_density.minCoeff();
    summary_["density_max_curvature"] = dens.max_curvature.maxCoeff();
    summary_["flow_condition_max"] = tf.max_condition;

    {
        std::ofstream out(artifact("diagnostics.csv"), std::ios::trunc);
        require(out.good(), ErrorKind::Io, "cannot write diagnostics.csv");
        out << "metric,value\n";
        for (const auto& [k, v] : summary_)
            out << k << ',' << format_double(v) << "\n";
    }
    note_artifact("diagnostics.csv");
}

void ScenarioRun::stage_verify_assumptions() {
    require(static_cast<bool>(model_), ErrorKind::Config,
            "assumption checks need a model (set [model] kind)");
    fs::create_directories(cfg_.out_dir);
    assumptions_ = std::make_unique<AssumptionReport>(verify_assumptions(
        *model_,
        default_assumption_samples(model_->dim_state(), model_->dim_control())));

    json j;
    j["model"] = model_->name();
    j["passed"] = assumptions_->passed();
    j["gamma_hat"] = assumptions_->gamma_hat;
    j["c_hat"] = assumptions_->c_hat;
    j["samples_checked"] = assumptions_->samples_checked;
    j["violations"] = json::array();
    for (const auto& v : assumptions_->violations)
        j["violations"].push_back({{"item", v.item},
                                   {"lhs", v.lhs},
                                   {"rhs", v.rhs},
                                   {"where", v.where}});
    j["advisories"] = json::array();
    for (const auto& v : assumptions_->advisories)
        j["advisories"].push_back({{"item", v.item},
                                   {"lhs", v.lhs},
                                   {"rhs", v.rhs},
                                   {"where", v.where}});
    atomic_write(artifact("assumptions.json"), j.dump(2) + "\n");
    note_artifact("assumptions.json");

    summary_["assumption_violations"] =
        static_cast<double>(assumptions_->violations.size());
    summary_["gamma_hat"] = assumptions_->gamma_hat;
    summary_["c_hat"] = assumptions_->c_hat;
}

void ScenarioRun::stage_emit_plots() {
    emit_plots(cfg_.out_dir);
    for (const char* f : {"residual_history.svg", "u_slices.svg", "density.svg",
                          "yz_scatter.svg"})
        if (fs::exists(artifact(f))) note_artifact(f);
}

void ScenarioRun::execute(const std::string& stage) {
    auto t0 = std::chrono::steady_clock::now();
    std::string detail;
    if (stage == "simulate") {
        stage_simulate();
        std::ostringstream os;
        os << cfg_.particles << " particles, " << cfg_.grid.steps << " steps";
        detail = os.str();
    } else if (stage == "solve-bsde") {
        stage_solve_bsde();
        std::ostringstream os;
        os << "y0 mean " << summary("y0_mean");
        detail = os.str();
    } else if (stage == "solve-mfg") {
        stage_solve_mfg();
        std::ostringstream os;
        os << "converged in " << equilibrium_->iterations
           << " iterations, residual "
           << equilibrium_->residual_history.back();
        detail = os.str();
    } else if (stage == "diagnose") {
        stage_diagnose();
        std::ostringstream os;
        os << "martingale-integrand gap " << summary("z_representation_worst");
        detail = os.str();
    } else if (stage == "verify-assumptions") {
        stage_verify_assumptions();
        std::ostringstream os;
        os << assumptions_->violations.size() << " violations, "
           << assumptions_->advisories.size() << " advisories";
        detail = os.str();
    } else if (stage == "emit-plots") {
        stage_emit_plots();
        detail = "svg set refreshed";
    } else {
        fail(ErrorKind::Config,
             "unknown stage '" + stage +
                 "' (simulate, solve-bsde, solve-mfg, diagnose, "
                 "verify-assumptions, emit-plots)");
    }
    double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                      .count();
    record_stage(stage, secs, detail);
    write_manifest();
}

void ScenarioRun::record_stage(const std::string& name, double seconds,
                               const std::string& detail) {
    stages_.push_back({name, seconds, detail});
}

void ScenarioRun::write_manifest() {
    fs::create_directories(cfg_.out_dir);
    json j;
    j["name"] = cfg_.name;
    j["version"] = kVersion;
    j["generated"] = timestamp_utc();
    json cfg;
    cfg["seed"] = cfg_.seed;
    cfg["threads"] = cfg_.threads;
    cfg["grid"] = {{"t0", cfg_.grid.t0},
                   {"horizon", cfg_.grid.horizon},
                   {"steps", cfg_.grid.steps}};
    cfg["particles"] = cfg_.particles;
    cfg["scheme"] = cfg_.scheme == Scheme::EulerIto ? "euler" : "heun";
    cfg["state_dim"] = cfg_.state_dim;
    cfg["noise_dim"] = cfg_.noise_dim;
    cfg["model"] = model_ ? model_->name() : "none";
    cfg["measure_mode"] =
        cfg_.measure_mode == MeasureMode::Tilted ? "tilted" : "untilted";
    cfg["damping"] = cfg_.damping;
    cfg["tol"] = cfg_.tol;
    cfg["basis_degree"] = cfg_.basis.degree;
    j["config"] = cfg;
    j["stages"] = json::array();
    for (const auto& s : stages_)
        j["stages"].push_back(
            {{"name", s.name}, {"seconds", s.seconds}, {"detail", s.detail}});
    json sum;
    for (const auto& [k, v] : summary_)
        if (std::isfinite(v)) sum[k] = v;
    j["summary"] = sum;
    j["artifacts"] = json::array();
    for (const auto& f : artifacts_) {
        std::string full = artifact(f);
        if (!fs::exists(full)) continue;
        j["artifacts"].push_back(
            {{"file", f},
             {"bytes", static_cast<std::uint64_t>(fs::file_size(full))},
             {"fnv1a64", hex64(fnv1a64_file(full))}});
    }
    atomic_write(manifest_path(), j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Plot rendering: self-contained svg line/scatter charts from the csv
// artifacts, no external tooling.

namespace {

struct Series {
    std::vector<double> x, y;
    std::string label;
};

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows; // numeric columns; NaN for text
};

CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::Io, "cannot read '" + path + "'");
    CsvTable t;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (first) {
            t.header = cells;
            first = false;
            continue;
        }
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) {
            try {
                row.push_back(std::stod(c));
            } catch (const std::exception&) {
                row.push_back(std::nan(""));
            }
        }
        t.rows.push_back(std::move(row));
    }
    return t;
}

Index column(const CsvTable& t, const std::string& name) {
    for (std::size_t k = 0; k < t.header.size(); ++k)
        if (t.header[k] == name) return static_cast<Index>(k);
    fail(ErrorKind::MissingArtifacts, "csv lacks a '" + name + "' column");
}

class Chart {
  public:
    Chart(std::string title, std::string xlabel, std::string ylabel)
        : title_(std::move(title)), xlabel_(std::move(xlabel)),
          ylabel_(std::move(ylabel)) {}

    void add_line(Series s) { lines_.push_back(std::move(s)); }
    void add_dots(Series s) { dots_.push_back(std::move(s)); }

    void render(const std::string& path) const {
        double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
        bool any = false;
        auto widen = [&](const Series& s) {
            for (std::size_t i = 0; i < s.x.size(); ++i) {
                if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
                if (!any) {
                    x0 = x1 = s.x[i];
                    y0 = y1 = s.y[i];
                    any = true;
                } else {
                    x0 = std::min(x0, s.x[i]); x1 = std::max(x1, s.x[i]);
                    y0 = std::min(y0, s.y[i]); y1 = std::max(y1, s.y[i]);
                }
            }
        };
        for (const auto& s : lines_) widen(s);
        for (const auto& s : dots_) widen(s);
        if (!any) { x0 = y0 = 0; x1 = y1 = 1; }
        if (x1 - x0 < 1e-300) { x0 -= 0.5; x1 += 0.5; }
        if (y1 - y0 < 1e-300) { y0 -= 0.5; y1 += 0.5; }
        double xpad = 0.05 * (x1 - x0), ypad = 0.08 * (y1 - y0);
        x0 -= xpad; x1 += xpad; y0 -= ypad; y1 += ypad;

        const int W = 720, H = 460, L = 70, R = 24, T = 40, B = 50;
        auto sx = [&](double x) {
            return L + (x - x0) / (x1 - x0) * (W - L - R);
        };
        auto sy = [&](double y) {
            return H - B - (y - y0) / (y1 - y0) * (H - T - B);
        };

        static const char* palette[] = {"#2a6fb0", "#c2452d", "#3a8a4d",
                                        "#8150a0", "#b08020", "#50808f"};
        std::ostringstream svg;
        svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W
            << "' height='" << H << "' viewBox='0 0 " << W << ' ' << H
            << "'>\n<rect width='100%' height='100%' fill='white'/>\n";
        svg << "<text x='" << W / 2 << "' y='24' text-anchor='middle' "
            << "font-family='sans-serif' font-size='15'>" << title_ << "</text>\n";
        svg << "<rect x='" << L << "' y='" << T << "' width='" << W - L - R
            << "' height='" << H - T - B
            << "' fill='none' stroke='#555' stroke-width='1'/>\n";
        for (int k = 0; k <= 4; ++k) {
            double fx = x0 + (x1 - x0) * k / 4.0;
            double fy = y0 + (y1 - y0) * k / 4.0;
            svg << "<text x='" << sx(fx) << "' y='" << H - B + 18
                << "' text-anchor='middle' font-family='sans-serif' "
                << "font-size='11'>" << std::setprecision(3) << fx << "</text>\n";
            svg << "<text x='" << L - 8 << "' y='" << sy(fy) + 4
                << "' text-anchor='end' font-family='sans-serif' "
                << "font-size='11'>" << std::setprecision(3) << fy << "</text>\n";
        }
        svg << "<text x='" << W / 2 << "' y='" << H - 12
            << "' text-anchor='middle' font-family='sans-serif' font-size='12'>"
            << xlabel_ << "</text>\n";
        svg << "<text x='18' y='" << H / 2
            << "' text-anchor='middle' font-family='sans-serif' font-size='12' "
            << "transform='rotate(-90 18 " << H / 2 << ")'>" << ylabel_
            << "</text>\n";

        std::size_t color = 0;
        for (const auto& s : lines_) {
            svg << "<polyline fill='none' stroke='" << palette[color % 6]
                << "' stroke-width='1.6' points='";
            for (std::size_t i = 0; i < s.x.size(); ++i)
                if (std::isfinite(s.x[i]) && std::isfinite(s.y[i]))
                    svg << sx(s.x[i]) << ',' << sy(s.y[i]) << ' ';
            svg << "'/>\n";
            if (!s.label.empty())
                svg << "<text x='" << W - R - 6 << "' y='" << T + 16 + 14 * color
                    << "' text-anchor='end' font-family='sans-serif' "
                    << "font-size='11' fill='" << palette[color % 6] << "'>"
                    << s.label << "</text>\n";
            ++color;
        }
        for (const auto& s : dots_) {
            for (std::size_t i = 0; i < s.x.size(); ++i)
                if (std::isfinite(s.x[i]) && std::isfinite(s.y[i]))
                    svg << "<circle cx='" << sx(s.x[i]) << "' cy='" << sy(s.y[i])
                        << "' r='1.8' fill='" << palette[color % 6]
                        << "' fill-opacity='0.5'/>\n";
            if (!s.label.empty())
                svg << "<text x='" << W - R - 6 << "' y='" << T + 16 + 14 * color
                    << "' text-anchor='end' font-family='sans-serif' "
                    << "font-size='11' fill='" << palette[color % 6] << "'>"
                    << s.label << "</text>\n";
            ++color;
        }
        svg << "</svg>\n";
        atomic_write(path, svg.str());
    }

  private:
    std::string title_, xlabel_, ylabel_;
    std::vector<Series> lines_, dots_;
};

} // namespace

void emit_plots(const std::string& run_dir) {
    fs::path dir(run_dir);
    require(fs::exists(dir), ErrorKind::MissingArtifacts,
            "run folder '" + run_dir + "' does not exist");
    bool rendered = false;

    fs::path residuals = dir / "residual_history.csv";
    if (fs::exists(residuals)) {
        CsvTable t = read_csv(residuals.string());
        Series s;
        Index ci = column(t, "iteration"), cr = column(t, "residual");
        for (const auto& row : t.rows) {
            s.x.push_back(row[static_cast<std::size_t>(ci)]);
            s.y.push_back(row[static_cast<std::size_t>(cr)]);
        }
        Chart c("Fixed-point residual per iteration", "iteration", "residual");
        c.add_line(std::move(s));
        c.render((dir / "residual_history.svg").string());
        rendered = true;
    }

    fs::path slices = dir / "u_slices.csv";
    if (fs::exists(slices)) {
        CsvTable t = read_csv(slices.string());
        Index cn = column(t, "node"), cx = column(t, "x"), cu = column(t, "u");
        std::map<double, Series> groups;
        for (const auto& row : t.rows) {
            Series& s = groups[row[static_cast<std::size_t>(cn)]];
            s.x.push_back(row[static_cast<std::size_t>(cx)]);
            s.y.push_back(row[static_cast<std::size_t>(cu)]);
        }
        Chart c("Value field slices", "x", "u(t, x)");
        for (auto& [node, s] : groups) {
            std::ostringstream os;
            os << "node " << static_cast<long long>(node);
            s.label = os.str();
            c.add_line(std::move(s));
        }
        c.render((dir / "u_slices.svg").string());
        rendered = true;
    }

    fs::path density = dir / "density.csv";
    if (fs::exists(density)) {
        CsvTable t = read_csv(density.string());
        Index cd = column(t, "dim"), cx = column(t, "x"), cf = column(t, "density");
        std::map<double, Series> groups;
        for (const auto& row : t.rows) {
            Series& s = groups[row[static_cast<std::size_t>(cd)]];
            s.x.push_back(row[static_cast<std::size_t>(cx)]);
            s.y.push_back(row[static_cast<std::size_t>(cf)]);
        }
        Chart c("Terminal marginal density", "x", "density");
        for (auto& [k, s] : groups) {
            std::ostringstream os;
            os << "coordinate " << static_cast<long long>(k);
            s.label = os.str();
            c.add_line(std::move(s));
        }
        c.render((dir / "density.svg").string());
        rendered = true;
    }

    fs::path yz = dir / "yz_nodes.csv";
    if (fs::exists(yz)) {
        CsvTable t = read_csv(yz.string());
        Index cn = column(t, "node"), cx = column(t, "x0"), cy = column(t, "y"),
              cz = column(t, "z0");
        double first_node = t.rows.empty() ? 0.0 : t.rows.front()[static_cast<std::size_t>(cn)];
        Series sy, sz;
        sy.label = "y";
        sz.label = "z";
        for (const auto& row : t.rows) {
            if (row[static_cast<std::size_t>(cn)] != first_node) continue;
            sy.x.push_back(row[static_cast<std::size_t>(cx)]);
            sy.y.push_back(row[static_cast<std::size_t>(cy)]);
            sz.x.push_back(row[static_cast<std::size_t>(cx)]);
            sz.y.push_back(row[static_cast<std::size_t>(cz)]);
        }
        std::ostringstream title;
        title << "Backward pair against the state (node "
              << static_cast<long long>(first_node) << ")";
        Chart c(title.str(), "x", "value");
        c.add_dots(std::move(sy));
        c.add_dots(std::move(sz));
        c.render((dir / "yz_scatter.svg").string());
        rendered = true;
    }

    require(rendered, ErrorKind::MissingArtifacts,
            "no plottable artifacts in '" + run_dir +
                "'; run the producing stages first");
}

} // namespace mfgw
