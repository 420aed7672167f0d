#include "odorloc/response_bank.hpp"

#include <Eigen/Sparse>
#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>

namespace odorloc {

namespace {

// Neumaier-compensated running sum over vectors.
struct CompensatedSum {
    std::vector<double> sum, comp;
    explicit CompensatedSum(std::size_t n) : sum(n, 0.0), comp(n, 0.0) {}
    void add(std::span<const double> x) {
        for (std::size_t k = 0; k < sum.size(); ++k) {
            const double t = sum[k] + x[k];
            if (std::abs(sum[k]) >= std::abs(x[k])) comp[k] += (sum[k] - t) + x[k];
            else comp[k] += (x[k] - t) + sum[k];
            sum[k] = t;
        }
    }
};

std::size_t last_active_count(const SimConfig& cfg, std::size_t nsteps) {
    // number of steps m in [0, nsteps) with the source on; source_active is
    // monotone in m
    std::size_t lo = 0, hi = nsteps;
    while (lo < hi) {
        const std::size_t mid = lo + (hi - lo) / 2;
        if (cfg.source_active(mid)) lo = mid + 1;
        else hi = mid;
    }
    return lo;
}

}  // namespace

ResponseBank ResponseBank::build(const SimConfig& cfg, std::span<const Vec2> sensors, std::span<const double> sample_times) {
    validate(cfg);
    ResponseBank bank;
    bank.cfg_ = cfg;
    bank.sensors_.assign(sensors.begin(), sensors.end());
    bank.times_.assign(sample_times.begin(), sample_times.end());
    const std::size_t ncell = cfg.cell_count();
    const std::size_t nsamp = sample_times.size();
    bank.data_.assign(sensors.size() * nsamp * ncell, 0.0);

    const TransportOperator op(cfg);
    const double q = cfg.emission * cfg.dt / cfg.cell_area();

    std::vector<std::size_t> steps(nsamp);
    std::size_t max_step = 0;
    for (std::size_t k = 0; k < nsamp; ++k) {
        steps[k] = cfg.step_index(sample_times[k]);
        max_step = std::max(max_step, steps[k]);
    }
    const std::size_t active = last_active_count(cfg, max_step);

    // r_N = q (P_N - P_a), a = max(0, N - active), P_J = sum_{j<J} v_j
    struct Event {
        std::size_t at;
        std::size_t sample;
        double sign;
    };
    std::vector<Event> events;
    for (std::size_t k = 0; k < nsamp; ++k) {
        const std::size_t n = steps[k];
        if (n == 0) continue;
        events.push_back({n, k, 1.0});
        const std::size_t a = n > active ? n - active : 0;
        if (a > 0) events.push_back({a, k, -1.0});
    }
    std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) { return a.at < b.at; });

    std::vector<double> v(ncell), next(ncell);
    for (std::size_t s = 0; s < sensors.size(); ++s) {
        std::fill(v.begin(), v.end(), 0.0);
        const BilinearWeights w = bilinear_weights(cfg, sensors[s]);
        for (int c = 0; c < 4; ++c) v[w.cells[c]] += w.weights[c];

        std::vector<double> hi(nsamp * ncell, 0.0), lo(nsamp * ncell, 0.0);
        CompensatedSum prefix(ncell);
        std::size_t ev = 0;
        for (std::size_t j = 0; j <= max_step && ev < events.size(); ++j) {
            while (ev < events.size() && events[ev].at == j) {
                const Event& e = events[ev++];
                double* h = &hi[e.sample * ncell];
                double* l = &lo[e.sample * ncell];
                for (std::size_t c = 0; c < ncell; ++c) {
                    h[c] += e.sign * prefix.sum[c];
                    l[c] += e.sign * prefix.comp[c];
                }
            }
            prefix.add(v);
            op.apply_transpose(v, next);
            std::swap(v, next);
        }
        double* out = &bank.data_[s * nsamp * ncell];
        for (std::size_t c = 0; c < nsamp * ncell; ++c) out[c] = std::max(0.0, q * (hi[c] + lo[c]));
    }
    return bank;
}

std::span<const double> ResponseBank::responses(std::size_t sensor, std::size_t sample) const {
    const std::size_t ncell = cfg_.cell_count();
    return {&data_[(sensor * times_.size() + sample) * ncell], ncell};
}

double ResponseBank::reading(std::size_t sensor, std::size_t sample, Vec2 source) const {
    return responses(sensor, sample)[linear_index(cfg_, nearest_cell(cfg_, source))];
}

double ResponseBank::interpolated(std::size_t sensor, std::size_t sample, Vec2 source) const {
    const Vec2 p{std::clamp(source.x, 0.0, cfg_.domain_size.x), std::clamp(source.y, 0.0, cfg_.domain_size.y)};
    const BilinearWeights w = bilinear_weights(cfg_, p);
    const auto r = responses(sensor, sample);
    double v = 0.0;
    for (int c = 0; c < 4; ++c) v += w.weights[c] * r[w.cells[c]];
    return v;
}

std::vector<double> ResponseBank::trace(std::size_t sensor, CellIndex source) const {
    std::vector<double> out(times_.size());
    const std::size_t k = linear_index(cfg_, source);
    for (std::size_t t = 0; t < times_.size(); ++t) out[t] = responses(sensor, t)[k];
    return out;
}

double transport_spectral_radius(const SimConfig& cfg, int iterations) {
    const TransportOperator op(cfg);
    std::vector<double> x(cfg.cell_count(), 1.0), y(cfg.cell_count());
    double ratio = 0.0;
    for (int it = 0; it < iterations; ++it) {
        op.apply(x, y);
        double nx = 0.0, ny = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k) {
            nx += x[k] * x[k];
            ny += y[k] * y[k];
        }
        ratio = std::sqrt(ny / nx);
        const double inv = 1.0 / std::sqrt(ny);
        for (std::size_t k = 0; k < x.size(); ++k) x[k] = y[k] * inv;
    }
    return ratio;
}

std::vector<double> plateau_peaks(const SimConfig& cfg) {
    validate(cfg);
    if (cfg.boundary != Boundary::DirichletZero) {
        throw ConfigError("plateau peaks need Dirichlet boundaries; use per-sample simulation instead");
    }
    const TransportOperator op(cfg);
    if (op.min_center_coefficient() < 0.0) {
        throw ConfigError("plateau peaks need a non-negative stencil (reduce dt)");
    }
    const std::size_t active = last_active_count(cfg, cfg.step_count());
    const double rho = transport_spectral_radius(cfg);
    if (active == 0 || !(static_cast<double>(active) * std::log(rho) < std::log(1e-14))) {
        throw ConfigError("injection does not reach its plateau within total_time; use per-sample simulation instead");
    }

    const std::size_t n = cfg.cell_count();
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(5 * n);
    const std::size_t nx = static_cast<std::size_t>(cfg.nx);
    for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c : {r, r + 1, r - 1, r + nx, r - nx}) {
            if (c >= n) continue;  // wraps for r - 1, r - nx at the low end
            const double a = op.coefficient(r, c);
            const double m = (r == c ? 1.0 : 0.0) - a;
            if (m != 0.0) trip.emplace_back(static_cast<int>(r), static_cast<int>(c), m);
        }
    }
    Eigen::SparseMatrix<double> mat(static_cast<int>(n), static_cast<int>(n));
    mat.setFromTriplets(trip.begin(), trip.end());
    mat.makeCompressed();
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    lu.compute(mat);
    if (lu.info() != Eigen::Success) throw NumericalError("plateau solve: factorization failed");

    const double q = cfg.emission * cfg.dt / cfg.cell_area();
    std::vector<double> peaks(n);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
    for (std::size_t k = 0; k < n; ++k) {
        rhs[static_cast<Eigen::Index>(k)] = 1.0;
        const Eigen::VectorXd x = lu.solve(rhs);
        peaks[k] = q * x[static_cast<Eigen::Index>(k)];
        rhs[static_cast<Eigen::Index>(k)] = 0.0;
    }
    return peaks;
}

}  // namespace odorloc
