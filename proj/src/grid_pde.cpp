#include "odorloc/grid_pde.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace odorloc {

namespace {

constexpr double kVelocityFloor = 1e-30;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (trim(v.substr(used)).empty()) return d;
    } catch (const std::exception&) {
    }
    throw ConfigError("config key '" + key + "': cannot parse number '" + v + "'");
}

Vec2 parse_pair(const std::string& key, const std::string& v) {
    const auto comma = v.find(',');
    if (comma == std::string::npos) throw ConfigError("config key '" + key + "': expected 'a,b', got '" + v + "'");
    return {parse_double(key, trim(v.substr(0, comma))), parse_double(key, trim(v.substr(comma + 1)))};
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

std::string to_string(Boundary b) {
    return b == Boundary::DirichletZero ? "dirichlet" : "neumann";
}

Boundary boundary_from_string(const std::string& s) {
    if (s == "dirichlet" || s == "DirichletZero") return Boundary::DirichletZero;
    if (s == "neumann" || s == "NeumannZeroFlux") return Boundary::NeumannZeroFlux;
    throw ConfigError("unknown boundary '" + s + "' (expected dirichlet or neumann)");
}

std::size_t SimConfig::step_count() const {
    return static_cast<std::size_t>(std::llround(total_time / dt));
}

std::size_t SimConfig::step_index(double t) const {
    if (t <= 0.0) return 0;
    return std::min(step_count(), static_cast<std::size_t>(std::llround(t / dt)));
}

double stability_bound(const SimConfig& cfg) {
    const double dx = cfg.dx();
    const double dy = cfg.dy();
    const double dx2 = dx * dx;
    const double dy2 = dy * dy;
    const double diff = dx2 * dy2 / (2.0 * cfg.diffusion * (dx2 + dy2));
    const double advx = dx / std::max(std::abs(cfg.flow.x), kVelocityFloor);
    const double advy = dy / std::max(std::abs(cfg.flow.y), kVelocityFloor);
    return std::min({diff, advx, advy});
}

void validate(const SimConfig& cfg) {
    if (cfg.nx < 2 || cfg.ny < 2) throw ConfigError("grid must be at least 2x2 (Nx >= 2, Ny >= 2)");
    if (!(cfg.domain_size.x > 0.0) || !(cfg.domain_size.y > 0.0)) throw ConfigError("domain_size must be > 0 (Lx > 0, Ly > 0)");
    if (!(cfg.diffusion > 0.0)) throw ConfigError("diffusion must be > 0 (D > 0)");
    if (!(cfg.degradation >= 0.0)) throw ConfigError("degradation must be >= 0 (lambda >= 0)");
    if (!(cfg.emission >= 0.0)) throw ConfigError("emission must be >= 0 (Q >= 0)");
    if (!(cfg.injection_duration >= 0.0)) throw ConfigError("injection_duration must be >= 0 (T_inj >= 0)");
    if (!(cfg.dt > 0.0)) throw ConfigError("dt must be > 0");
    if (!(cfg.total_time >= 0.0)) throw ConfigError("total_time must be >= 0");
    if (!(cfg.noise_sigma_frac >= 0.0)) throw ConfigError("noise_sigma_frac must be >= 0");
    if (!std::isfinite(cfg.flow.x) || !std::isfinite(cfg.flow.y)) throw ConfigError("flow must be finite");
    const double bound = stability_bound(cfg);
    if (cfg.dt > bound) {
        throw ConfigError("dt = " + fmt(cfg.dt) + " exceeds the stability bound " + fmt(bound) +
                          " (min(dx^2 dy^2 / (2 D (dx^2 + dy^2)), dx/|u_x|, dy/|u_y|))");
    }
    if (!inside_domain(cfg, cfg.source_pos)) throw ConfigError("source_pos lies outside [0,Lx]x[0,Ly]");
}

SimConfig make_config(const ConfigOverrides& o) {
    SimConfig cfg;
    if (o.domain_size) cfg.domain_size = *o.domain_size;
    if (o.nx) cfg.nx = *o.nx;
    if (o.ny) cfg.ny = *o.ny;
    if (o.diffusion) cfg.diffusion = *o.diffusion;
    if (o.flow) cfg.flow = *o.flow;
    if (o.degradation) cfg.degradation = *o.degradation;
    if (o.emission) cfg.emission = *o.emission;
    if (o.source_pos) cfg.source_pos = *o.source_pos;
    if (o.injection_duration) cfg.injection_duration = *o.injection_duration;
    if (o.total_time) cfg.total_time = *o.total_time;
    if (o.boundary) cfg.boundary = *o.boundary;
    if (o.noise_sigma_frac) cfg.noise_sigma_frac = *o.noise_sigma_frac;
    if (o.dt) {
        cfg.dt = *o.dt;
    } else if (cfg.nx >= 2 && cfg.ny >= 2 && cfg.diffusion > 0.0 && cfg.domain_size.x > 0.0 && cfg.domain_size.y > 0.0) {
        cfg.dt = 0.5 * stability_bound(cfg);
    }
    validate(cfg);
    return cfg;
}

ConfigOverrides parse_config_text(const std::string& text) {
    ConfigOverrides o;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (key == "domain_size") o.domain_size = parse_pair(key, val);
        else if (key == "grid") {
            const Vec2 g = parse_pair(key, val);
            o.nx = static_cast<int>(g.x);
            o.ny = static_cast<int>(g.y);
        } else if (key == "diffusion") o.diffusion = parse_double(key, val);
        else if (key == "flow") o.flow = parse_pair(key, val);
        else if (key == "degradation") o.degradation = parse_double(key, val);
        else if (key == "emission") o.emission = parse_double(key, val);
        else if (key == "source_pos") o.source_pos = parse_pair(key, val);
        else if (key == "injection_duration") o.injection_duration = parse_double(key, val);
        else if (key == "dt") o.dt = parse_double(key, val);
        else if (key == "total_time") o.total_time = parse_double(key, val);
        else if (key == "boundary") o.boundary = boundary_from_string(val);
        else if (key == "noise_sigma_frac") o.noise_sigma_frac = parse_double(key, val);
        else throw ConfigError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    return o;
}

ConfigOverrides read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

std::string format_config(const SimConfig& c) {
    std::ostringstream os;
    os << "domain_size=" << fmt(c.domain_size.x) << "," << fmt(c.domain_size.y) << "\n"
       << "grid=" << c.nx << "," << c.ny << "\n"
       << "diffusion=" << fmt(c.diffusion) << "\n"
       << "flow=" << fmt(c.flow.x) << "," << fmt(c.flow.y) << "\n"
       << "degradation=" << fmt(c.degradation) << "\n"
       << "emission=" << fmt(c.emission) << "\n"
       << "source_pos=" << fmt(c.source_pos.x) << "," << fmt(c.source_pos.y) << "\n"
       << "injection_duration=" << fmt(c.injection_duration) << "\n"
       << "dt=" << fmt(c.dt) << "\n"
       << "total_time=" << fmt(c.total_time) << "\n"
       << "boundary=" << to_string(c.boundary) << "\n"
       << "noise_sigma_frac=" << fmt(c.noise_sigma_frac) << "\n";
    return os.str();
}

bool inside_domain(const SimConfig& cfg, Vec2 p) {
    return p.x >= 0.0 && p.y >= 0.0 && p.x <= cfg.domain_size.x && p.y <= cfg.domain_size.y;
}

CellIndex nearest_cell(const SimConfig& cfg, Vec2 pos) {
    const int i = static_cast<int>(std::floor(pos.x / cfg.dx()));
    const int j = static_cast<int>(std::floor(pos.y / cfg.dy()));
    return {std::clamp(i, 0, cfg.nx - 1), std::clamp(j, 0, cfg.ny - 1)};
}

Vec2 cell_center(const SimConfig& cfg, CellIndex c) {
    return {(c.i + 0.5) * cfg.dx(), (c.j + 0.5) * cfg.dy()};
}

BilinearWeights bilinear_weights(const SimConfig& cfg, Vec2 pos) {
    if (!inside_domain(cfg, pos)) {
        throw ConfigError("sensor position (" + fmt(pos.x) + ", " + fmt(pos.y) + ") lies outside the domain");
    }
    const double fx = pos.x / cfg.dx() - 0.5;
    const double fy = pos.y / cfg.dy() - 0.5;
    const int i0 = std::clamp(static_cast<int>(std::floor(fx)), 0, cfg.nx - 2);
    const int j0 = std::clamp(static_cast<int>(std::floor(fy)), 0, cfg.ny - 2);
    const double tx = std::clamp(fx - i0, 0.0, 1.0);
    const double ty = std::clamp(fy - j0, 0.0, 1.0);
    BilinearWeights w{};
    const std::size_t nx = static_cast<std::size_t>(cfg.nx);
    const std::size_t base = static_cast<std::size_t>(j0) * nx + static_cast<std::size_t>(i0);
    w.cells[0] = base;
    w.cells[1] = base + 1;
    w.cells[2] = base + nx;
    w.cells[3] = base + nx + 1;
    w.weights[0] = (1.0 - tx) * (1.0 - ty);
    w.weights[1] = tx * (1.0 - ty);
    w.weights[2] = (1.0 - tx) * ty;
    w.weights[3] = tx * ty;
    return w;
}

namespace {

double sample_values(const BilinearWeights& w, std::span<const double> v) {
    double r = 0.0;
    for (int k = 0; k < 4; ++k) r += w.weights[k] * v[w.cells[k]];
    return r;
}

}  // namespace

ConcentrationField::ConcentrationField(const SimConfig& cfg, double time)
    : cfg_(cfg), time_(time), values_(cfg.cell_count(), 0.0) {}

double ConcentrationField::total_mass() const {
    double s = 0.0;
    for (double v : values_) s += v;
    return s * cfg_.cell_area();
}

double ConcentrationField::max_value() const {
    return values_.empty() ? 0.0 : *std::max_element(values_.begin(), values_.end());
}

double ConcentrationField::sample(Vec2 pos) const {
    return sample_values(bilinear_weights(cfg_, pos), values_);
}

// Face flux between left cell p and right cell q (unit normal +x):
//   F = u+ C_p + u- C_q - (D/h)(C_q - C_p)
// so a cell loses a(u+ + D/h) of itself through its right face and gains
// a(D/h - u-) from its right neighbour; symmetrically on the left face.
// Dirichlet walls keep the self term and drop the ghost (C = 0) term,
// zero-flux walls drop the face entirely.
TransportOperator::TransportOperator(const SimConfig& cfg) : cfg_(cfg), zeros_(static_cast<std::size_t>(cfg.nx), 0.0) {
    const std::size_t n = cfg.cell_count();
    for (auto* v : {&fwd_.c, &fwd_.e, &fwd_.w, &fwd_.n, &fwd_.s, &adj_.c, &adj_.e, &adj_.w, &adj_.n, &adj_.s}) {
        v->assign(n, 0.0);
    }
    const double ax = cfg.dt / cfg.dx();
    const double ay = cfg.dt / cfg.dy();
    const double dhx = cfg.diffusion / cfg.dx();
    const double dhy = cfg.diffusion / cfg.dy();
    const double upx = std::max(cfg.flow.x, 0.0), unx = std::min(cfg.flow.x, 0.0);
    const double upy = std::max(cfg.flow.y, 0.0), uny = std::min(cfg.flow.y, 0.0);
    const bool dirichlet = cfg.boundary == Boundary::DirichletZero;

    for (int j = 0; j < cfg.ny; ++j) {
        for (int i = 0; i < cfg.nx; ++i) {
            const std::size_t k = static_cast<std::size_t>(j) * cfg.nx + i;
            double centre = 1.0 - cfg.degradation * cfg.dt;
            // right face
            if (i + 1 < cfg.nx || dirichlet) centre -= ax * (upx + dhx);
            if (i + 1 < cfg.nx) fwd_.e[k] = ax * (dhx - unx);
            // left face
            if (i > 0 || dirichlet) centre += ax * (unx - dhx);
            if (i > 0) fwd_.w[k] = ax * (upx + dhx);
            // top face (+y)
            if (j + 1 < cfg.ny || dirichlet) centre -= ay * (upy + dhy);
            if (j + 1 < cfg.ny) fwd_.n[k] = ay * (dhy - uny);
            // bottom face
            if (j > 0 || dirichlet) centre += ay * (uny - dhy);
            if (j > 0) fwd_.s[k] = ay * (upy + dhy);
            fwd_.c[k] = centre;
        }
    }
    // A^T: the coefficient multiplying in[k+1] in row k is A(k+1, k) = w[k+1].
    const std::size_t nx = static_cast<std::size_t>(cfg.nx);
    for (std::size_t k = 0; k < n; ++k) {
        adj_.c[k] = fwd_.c[k];
        const std::size_t i = k % nx;
        if (i + 1 < nx) adj_.e[k] = fwd_.w[k + 1];
        if (i > 0) adj_.w[k] = fwd_.e[k - 1];
        if (k + nx < n) adj_.n[k] = fwd_.s[k + nx];
        if (k >= nx) adj_.s[k] = fwd_.n[k - nx];
    }
}

void TransportOperator::apply_stencil(const Stencil& st, std::span<const double> in, std::span<double> out) const {
    const std::size_t nx = static_cast<std::size_t>(cfg_.nx);
    const std::size_t ny = static_cast<std::size_t>(cfg_.ny);
    const double* x = in.data();
    double* y = out.data();
    for (std::size_t j = 0; j < ny; ++j) {
        const std::size_t row = j * nx;
        // wall rows read from a zero row; their n/s coefficients are zero anyway
        const double* xr = x + row;
        const double* xn = j + 1 < ny ? xr + nx : zeros_.data();
        const double* xs = j > 0 ? xr - nx : zeros_.data();
        const double* c = st.c.data() + row;
        const double* e = st.e.data() + row;
        const double* w = st.w.data() + row;
        const double* no = st.n.data() + row;
        const double* so = st.s.data() + row;
        double* yr = y + row;
        yr[0] = c[0] * xr[0] + e[0] * xr[1] + no[0] * xn[0] + so[0] * xs[0];
        for (std::size_t i = 1; i + 1 < nx; ++i) {
            yr[i] = c[i] * xr[i] + e[i] * xr[i + 1] + w[i] * xr[i - 1] + no[i] * xn[i] + so[i] * xs[i];
        }
        const std::size_t l = nx - 1;
        yr[l] = c[l] * xr[l] + w[l] * xr[l - 1] + no[l] * xn[l] + so[l] * xs[l];
    }
}

void TransportOperator::apply(std::span<const double> in, std::span<double> out) const {
    apply_stencil(fwd_, in, out);
}

void TransportOperator::apply_transpose(std::span<const double> in, std::span<double> out) const {
    apply_stencil(adj_, in, out);
}

double TransportOperator::min_center_coefficient() const {
    return *std::min_element(fwd_.c.begin(), fwd_.c.end());
}

double TransportOperator::coefficient(std::size_t row, std::size_t col) const {
    const std::size_t nx = static_cast<std::size_t>(cfg_.nx);
    if (col == row) return fwd_.c[row];
    if (col == row + 1 && row % nx + 1 < nx) return fwd_.e[row];
    if (col + 1 == row && row % nx > 0) return fwd_.w[row];
    if (col == row + nx) return fwd_.n[row];
    if (col + nx == row) return fwd_.s[row];
    return 0.0;
}

namespace {

// Source deposit, positivity clamp and finiteness check after the linear
// stencil has been applied. Returns the largest value.
double finish_step(bool source_on, std::size_t src, double deposit, std::span<double> v, StepStats& stats,
                   double t_end) {
    if (source_on) v[src] += deposit;
    // four independent lanes so the reductions vectorize
    double sum[4] = {0.0, 0.0, 0.0, 0.0};
    double lo[4] = {0.0, 0.0, 0.0, 0.0};
    double hi[4] = {0.0, 0.0, 0.0, 0.0};
    const std::size_t n = v.size();
    std::size_t k = 0;
    for (; k + 4 <= n; k += 4) {
        for (int l = 0; l < 4; ++l) {
            const double x = v[k + l];
            sum[l] += x;
            lo[l] = std::min(lo[l], x);
            hi[l] = std::max(hi[l], x);
        }
    }
    for (; k < n; ++k) {
        sum[0] += v[k];
        lo[0] = std::min(lo[0], v[k]);
        hi[0] = std::max(hi[0], v[k]);
    }
    const double total = (sum[0] + sum[1]) + (sum[2] + sum[3]);
    if (!std::isfinite(total)) {
        throw NumericalError("solver instability: non-finite concentration in the step ending at t = " + fmt(t_end) +
                             " s");
    }
    if (std::min(std::min(lo[0], lo[1]), std::min(lo[2], lo[3])) < 0.0) {
        for (double& x : v) {
            if (x < 0.0) {
                x = 0.0;
                ++stats.clamped;
            }
        }
    }
    return std::max(std::max(hi[0], hi[1]), std::max(hi[2], hi[3]));
}

}  // namespace

ConcentrationField step(const ConcentrationField& field, const SimConfig& cfg, double t, StepStats* stats) {
    if (field.nx() != cfg.nx || field.ny() != cfg.ny) throw ConfigError("field shape does not match config grid");
    validate(cfg);
    const TransportOperator op(cfg);
    ConcentrationField out(cfg, t + cfg.dt);
    op.apply(field.values(), out.values());
    StepStats local;
    const std::size_t src = linear_index(cfg, nearest_cell(cfg, cfg.source_pos));
    const double deposit = cfg.emission * cfg.dt / cfg.cell_area();
    finish_step(t <= cfg.injection_duration, src, deposit, out.values(), local, t + cfg.dt);
    if (stats) stats->clamped += local.clamped;
    return out;
}

RunResult run_to_time(const SimConfig& cfg, const RunOptions& opts) {
    validate(cfg);
    const TransportOperator op(cfg);
    const std::size_t nsteps = cfg.step_count();
    const std::size_t src = linear_index(cfg, nearest_cell(cfg, cfg.source_pos));
    const double deposit = cfg.emission * cfg.dt / cfg.cell_area();

    ConcentrationField cur(cfg, 0.0);
    if (opts.initial) {
        if (opts.initial->nx() != cfg.nx || opts.initial->ny() != cfg.ny) {
            throw ConfigError("initial field shape does not match config grid");
        }
        std::copy(opts.initial->values().begin(), opts.initial->values().end(), cur.values().begin());
    }
    ConcentrationField next(cfg, 0.0);

    std::vector<BilinearWeights> probes;
    for (const Vec2& p : opts.probe_positions) probes.push_back(bilinear_weights(cfg, p));
    std::vector<std::size_t> probe_steps;
    for (double t : opts.probe_times) probe_steps.push_back(cfg.step_index(t));
    std::vector<std::size_t> snap_steps;
    for (double t : opts.snapshot_times) snap_steps.push_back(cfg.step_index(t));

    RunResult res;
    res.probe_readings.assign(probes.size(), std::vector<double>(probe_steps.size(), 0.0));
    res.snapshots.resize(snap_steps.size());
    StepStats stats;

    auto order_by_step = [](const std::vector<std::size_t>& steps) {
        std::vector<std::size_t> idx(steps.size());
        for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return steps[a] < steps[b]; });
        return idx;
    };
    const std::vector<std::size_t> probe_order = order_by_step(probe_steps);
    const std::vector<std::size_t> snap_order = order_by_step(snap_steps);
    std::size_t next_probe = 0, next_snap = 0;

    auto record = [&](std::size_t n, const ConcentrationField& f, double fmax) {
        res.peak = std::max(res.peak, fmax);
        for (; next_probe < probe_order.size() && probe_steps[probe_order[next_probe]] == n; ++next_probe) {
            const std::size_t k = probe_order[next_probe];
            for (std::size_t p = 0; p < probes.size(); ++p) res.probe_readings[p][k] = sample_values(probes[p], f.values());
        }
        for (; next_snap < snap_order.size() && snap_steps[snap_order[next_snap]] == n; ++next_snap) {
            const std::size_t k = snap_order[next_snap];
            res.snapshots[k] = f;
            res.snapshots[k].set_time(static_cast<double>(n) * cfg.dt);
        }
    };

    record(0, cur, cur.max_value());
    for (std::size_t n = 0; n < nsteps; ++n) {
        op.apply(cur.values(), next.values());
        const double fmax =
            finish_step(cfg.source_active(n), src, deposit, next.values(), stats, static_cast<double>(n + 1) * cfg.dt);
        std::swap(cur, next);
        record(n + 1, cur, fmax);
    }
    cur.set_time(static_cast<double>(nsteps) * cfg.dt);
    res.final_field = std::move(cur);
    res.clamped = stats.clamped;
    return res;
}

std::vector<double> forward_concentration(Vec2 candidate, std::span<const Vec2> sensors, const SimConfig& cfg) {
    if (!inside_domain(cfg, candidate)) throw ConfigError("candidate source lies outside the domain");
    for (const Vec2& s : sensors) bilinear_weights(cfg, s);  // throws when outside
    SimConfig moved = cfg;
    moved.source_pos = candidate;
    const RunResult r = run_to_time(moved);
    std::vector<double> out;
    out.reserve(sensors.size());
    for (const Vec2& s : sensors) out.push_back(r.final_field.sample(s));
    return out;
}

void write_field_csv(const std::string& path, const ConcentrationField& field) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out.precision(17);
    const SimConfig& c = field.config();
    out << "nx,ny,lx,ly,t\n" << c.nx << "," << c.ny << "," << c.domain_size.x << "," << c.domain_size.y << ","
        << field.time() << "\n";
    for (int j = 0; j < c.ny; ++j) {
        for (int i = 0; i < c.nx; ++i) {
            if (i) out << ",";
            out << field.at(i, j);
        }
        out << "\n";
    }
}

ConcentrationField read_field_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read '" + path + "'");
    std::string line;
    std::getline(in, line);
    if (trim(line) != "nx,ny,lx,ly,t") throw std::runtime_error("'" + path + "': bad field CSV header");
    std::getline(in, line);
    std::vector<double> meta;
    {
        std::istringstream ls(line);
        std::string tok;
        while (std::getline(ls, tok, ',')) meta.push_back(std::stod(tok));
    }
    if (meta.size() != 5) throw std::runtime_error("'" + path + "': bad field CSV metadata");
    SimConfig cfg;
    cfg.nx = static_cast<int>(meta[0]);
    cfg.ny = static_cast<int>(meta[1]);
    cfg.domain_size = {meta[2], meta[3]};
    ConcentrationField f(cfg, meta[4]);
    for (int j = 0; j < cfg.ny; ++j) {
        if (!std::getline(in, line)) throw std::runtime_error("'" + path + "': truncated field CSV");
        std::istringstream ls(line);
        std::string tok;
        for (int i = 0; i < cfg.nx; ++i) {
            if (!std::getline(ls, tok, ',')) throw std::runtime_error("'" + path + "': short row");
            f.at(i, j) = std::stod(tok);
        }
    }
    return f;
}

std::vector<unsigned char> pgm_pixels(std::span<const double> values, int nx, int ny) {
    double vmax = 0.0;
    for (double v : values) vmax = std::max(vmax, v);
    std::vector<unsigned char> px(static_cast<std::size_t>(nx) * ny, 0);
    if (!(vmax > 0.0) || !std::isfinite(vmax)) return px;
    std::size_t o = 0;
    for (int j = ny - 1; j >= 0; --j) {
        for (int i = 0; i < nx; ++i) {
            const double v = std::max(0.0, values[static_cast<std::size_t>(j) * nx + i]);
            px[o++] = static_cast<unsigned char>(std::lround(255.0 * std::min(1.0, v / vmax)));
        }
    }
    return px;
}

void write_pgm(const std::string& path, std::span<const double> values, int nx, int ny) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    const auto px = pgm_pixels(values, nx, ny);
    out << "P5\n" << nx << " " << ny << "\n255\n";
    out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
}

}  // namespace odorloc
