#include "odorloc/bayes.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

namespace odorloc {

namespace {

double resolve_sigma(const SensorTrace& tr, std::optional<double> sigma) {
    const double s = sigma.value_or(tr.noise_sigma);
    if (!(s > 0.0) || !std::isfinite(s)) throw ConfigError("likelihood needs noise sigma > 0");
    return s;
}

void check_traces(std::span<const SensorTrace> traces) {
    if (traces.empty()) throw ConfigError("no sensor traces given");
    for (const auto& tr : traces) {
        if (tr.times.empty() || tr.times.size() != tr.readings.size()) {
            throw ConfigError("sensor trace must be non-empty with one reading per time");
        }
    }
}

void check_bank(std::span<const SensorTrace> traces, const ResponseBank& bank) {
    if (bank.sensor_count() != traces.size()) throw ConfigError("response bank sensors do not match the traces");
    for (std::size_t s = 0; s < traces.size(); ++s) {
        if (!(bank.sensors()[s] == traces[s].sensor_pos)) throw ConfigError("response bank sensor position mismatch");
        const auto bt = bank.sample_times();
        if (!std::equal(bt.begin(), bt.end(), traces[s].times.begin(), traces[s].times.end())) {
            throw ConfigError("response bank sample times do not match the trace times");
        }
    }
}

double gaussian_ll(std::span<const double> z, std::span<const double> c, double sigma) {
    double acc = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) {
        const double r = z[k] - c[k];
        acc += r * r;
    }
    return -acc / (2.0 * sigma * sigma);
}

}  // namespace

std::vector<std::vector<double>> forward_traces(Vec2 candidate, std::span<const SensorTrace> traces, const SimConfig& cfg) {
    check_traces(traces);
    if (!inside_domain(cfg, candidate)) throw ConfigError("candidate source lies outside the domain");
    SimConfig c = cfg;
    c.source_pos = candidate;
    // traces may use different time grids, so probe the union and pick back
    std::vector<double> all;
    for (const auto& tr : traces) all.insert(all.end(), tr.times.begin(), tr.times.end());
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    RunOptions opts;
    opts.probe_times = all;
    for (const auto& tr : traces) opts.probe_positions.push_back(tr.sensor_pos);
    const RunResult run = run_to_time(c, opts);
    std::vector<std::vector<double>> out(traces.size());
    for (std::size_t s = 0; s < traces.size(); ++s) {
        for (double t : traces[s].times) {
            const std::size_t k = static_cast<std::size_t>(std::lower_bound(all.begin(), all.end(), t) - all.begin());
            out[s].push_back(run.probe_readings[s][k]);
        }
    }
    return out;
}

double log_likelihood(Vec2 candidate, std::span<const SensorTrace> traces, const SimConfig& cfg,
                      std::optional<double> sigma) {
    check_traces(traces);
    for (const auto& tr : traces) resolve_sigma(tr, sigma);
    const auto pred = forward_traces(candidate, traces, cfg);
    double ll = 0.0;
    for (std::size_t s = 0; s < traces.size(); ++s) ll += gaussian_ll(traces[s].readings, pred[s], resolve_sigma(traces[s], sigma));
    return ll;
}

double log_likelihood(Vec2 candidate, std::span<const SensorTrace> traces, const ResponseBank& bank,
                      std::optional<double> sigma) {
    check_traces(traces);
    check_bank(traces, bank);
    if (!inside_domain(bank.config(), candidate)) throw ConfigError("candidate source lies outside the domain");
    double ll = 0.0;
    for (std::size_t s = 0; s < traces.size(); ++s) {
        const double sg = resolve_sigma(traces[s], sigma);
        std::vector<double> pred(traces[s].times.size());
        for (std::size_t k = 0; k < pred.size(); ++k) pred[k] = bank.reading(s, k, candidate);
        ll += gaussian_ll(traces[s].readings, pred, sg);
    }
    return ll;
}

double Posterior::probability(std::size_t k) const { return std::exp(log_posterior[k]); }

double Posterior::total_probability() const {
    double s = 0.0;
    for (std::size_t k = 0; k < log_posterior.size(); ++k) s += probability(k);
    return s;
}

std::vector<Vec2> candidate_grid(const SimConfig& cfg, int nc) {
    if (nc < 2) throw ConfigError("candidate resolution Nc >= 2 required");
    std::vector<Vec2> out;
    out.reserve(static_cast<std::size_t>(nc) * nc);
    for (int r = 0; r < nc; ++r)
        for (int c = 0; c < nc; ++c)
            out.push_back({(c + 0.5) * cfg.domain_size.x / nc, (r + 0.5) * cfg.domain_size.y / nc});
    return out;
}

Posterior make_posterior(const SimConfig& cfg, int nc, std::vector<double> log_lik) {
    Posterior p;
    p.nc = nc;
    p.domain_size = cfg.domain_size;
    p.candidates = candidate_grid(cfg, nc);
    if (log_lik.size() != p.candidates.size()) throw ConfigError("log-likelihood count does not match the candidate grid");
    double mx = -std::numeric_limits<double>::infinity(), mn = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < log_lik.size(); ++k) {
        if (std::isnan(log_lik[k])) throw NumericalError("log-likelihood is NaN at candidate " + std::to_string(k));
        if (log_lik[k] > mx) {
            mx = log_lik[k];
            p.argmax = k;
            p.tie_count = 1;
        } else if (log_lik[k] == mx) {
            ++p.tie_count;
        }
        mn = std::min(mn, log_lik[k]);
    }
    if (!std::isfinite(mx)) throw NumericalError("log-likelihood has no finite maximum");
    p.uninformative = (mx == mn);
    double s = 0.0;
    for (double v : log_lik) s += std::exp(v - mx);
    p.log_normalizer = mx + std::log(s);
    p.log_posterior.resize(log_lik.size());
    for (std::size_t k = 0; k < log_lik.size(); ++k) p.log_posterior[k] = log_lik[k] - p.log_normalizer;
    p.log_likelihood = std::move(log_lik);
    return p;
}

namespace {

MapResult finish_map(const SimConfig& cfg, int nc, std::vector<double> ll, Vec2 truth, double seconds) {
    MapResult r;
    r.posterior = make_posterior(cfg, nc, std::move(ll));
    r.estimate.method = "MAP";
    r.estimate.estimate = r.posterior.candidates[r.posterior.argmax];
    r.estimate.inference_s = seconds;
    if (r.posterior.uninformative) add_flag(r.estimate.flags, "uninformative data");
    if (r.posterior.tie_count > 1) add_flag(r.estimate.flags, "argmax tie, lowest index kept");
    score(r.estimate, truth);
    return r;
}

}  // namespace

MapResult map_estimate(std::span<const SensorTrace> traces, const SimConfig& cfg, Vec2 truth, const MapOptions& opt) {
    check_traces(traces);
    const Stopwatch sw;
    const auto cand = candidate_grid(cfg, opt.candidate_resolution);
    std::vector<double> ll(cand.size());
    for (std::size_t k = 0; k < cand.size(); ++k) ll[k] = log_likelihood(cand[k], traces, cfg, opt.sigma);
    return finish_map(cfg, opt.candidate_resolution, std::move(ll), truth, sw.seconds());
}

MapResult map_estimate(std::span<const SensorTrace> traces, const ResponseBank& bank, Vec2 truth, const MapOptions& opt) {
    check_traces(traces);
    check_bank(traces, bank);
    const Stopwatch sw;
    const SimConfig& cfg = bank.config();
    const auto cand = candidate_grid(cfg, opt.candidate_resolution);
    // accumulate over solver cells, then read off the candidates' cells
    std::vector<double> cell_ll(cfg.cell_count(), 0.0);
    for (std::size_t s = 0; s < traces.size(); ++s) {
        const double sg = resolve_sigma(traces[s], opt.sigma);
        const double w = -1.0 / (2.0 * sg * sg);
        for (std::size_t k = 0; k < traces[s].readings.size(); ++k) {
            const double z = traces[s].readings[k];
            const auto resp = bank.responses(s, k);
            for (std::size_t c = 0; c < resp.size(); ++c) {
                const double r = z - resp[c];
                cell_ll[c] += w * r * r;
            }
        }
    }
    std::vector<double> ll(cand.size());
    for (std::size_t k = 0; k < cand.size(); ++k) ll[k] = cell_ll[linear_index(cfg, nearest_cell(cfg, cand[k]))];
    return finish_map(cfg, opt.candidate_resolution, std::move(ll), truth, sw.seconds());
}

void write_posterior_csv(const std::string& path, const Posterior& post) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out.precision(17);
    const std::size_t nc = static_cast<std::size_t>(post.nc);
    out << "nc,lx,ly,argmax_row,argmax_col\n";
    out << nc << "," << post.domain_size.x << "," << post.domain_size.y << "," << post.argmax / nc << ","
        << post.argmax % nc << "\n";
    for (std::size_t r = 0; r < nc; ++r) {
        for (std::size_t c = 0; c < nc; ++c) out << (c ? "," : "") << post.probability(r * nc + c);
        out << "\n";
    }
}

void write_posterior_pgm(const std::string& path, const Posterior& post) {
    std::vector<double> p(post.log_posterior.size());
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = post.probability(k);
    write_pgm(path, p, post.nc, post.nc);
}

FilterState initial_state(const SimConfig& cfg, double sigma0) {
    FilterState s;
    s.mean = 0.5 * cfg.domain_size;
    s.cov = sigma0 * sigma0 * Eigen::Matrix2d::Identity();
    return s;
}

namespace {

bool finite(const Eigen::Matrix2d& m) { return m.allFinite(); }

}  // namespace

FilterState kalman_update(const FilterState& state, double z, const Measurement& h, double R, const KalmanOptions& opt,
                          UpdateInfo* info) {
    if (!(R > 0.0)) throw ConfigError("measurement variance R must be > 0");
    UpdateInfo local;
    UpdateInfo& inf = info ? *info : local;
    inf = UpdateInfo{};

    FilterState pred = state;
    pred.cov += opt.process_noise * Eigen::Matrix2d::Identity();

    const Vec2 m = pred.mean;
    const double e = opt.fd_step;
    Eigen::RowVector2d H;
    H(0) = (h({m.x + e, m.y}) - h({m.x - e, m.y})) / (2.0 * e);
    H(1) = (h({m.x, m.y + e}) - h({m.x, m.y - e})) / (2.0 * e);
    inf.jacobian = H;
    const double hx = h(m);
    if (!H.allFinite() || !std::isfinite(hx)) {
        inf.diverged = true;
        FilterState same = state;
        ++same.steps;
        return same;
    }
    inf.innovation = z - hx;

    const double S = (H * pred.cov * H.transpose())(0, 0) + R;
    const Eigen::Vector2d K = pred.cov * H.transpose() / S;
    const Eigen::Matrix2d IKH = Eigen::Matrix2d::Identity() - K * H;
    Eigen::Matrix2d P = IKH * pred.cov * IKH.transpose() + R * K * K.transpose();
    P = (0.5 * (P + P.transpose())).eval();

    FilterState out;
    out.mean = {m.x + K(0) * inf.innovation, m.y + K(1) * inf.innovation};
    out.steps = state.steps + 1;
    if (!finite(P) || !std::isfinite(out.mean.x) || !std::isfinite(out.mean.y)) {
        inf.diverged = true;
        FilterState same = state;
        ++same.steps;
        return same;
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(P);
    if (eig.eigenvalues().minCoeff() < opt.eigen_floor) {
        const Eigen::Vector2d lam = eig.eigenvalues().cwiseMax(opt.eigen_floor);
        P = eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
        P = (0.5 * (P + P.transpose())).eval();
        inf.repaired = true;
    }
    out.cov = P;
    return out;
}

ObservationModel bank_observation_model(const ResponseBank& bank) {
    return [&bank](std::size_t sensor, std::size_t sample, Vec2 src) { return bank.interpolated(sensor, sample, src); };
}

FilterResult run_filter(std::span<const SensorTrace> traces, const ObservationModel& h, const SimConfig& cfg,
                        const FilterState& init, Vec2 truth, const FilterOptions& opt) {
    check_traces(traces);
    const std::size_t nsamp = traces[0].readings.size();
    for (const auto& tr : traces) {
        if (tr.readings.size() != nsamp) throw ConfigError("all traces must share the sample count");
    }
    const Stopwatch sw;
    FilterResult res;
    res.trajectory.reserve(nsamp * traces.size() + 1);
    res.trajectory.push_back(init);
    FilterState st = init;
    for (std::size_t k = 0; k < nsamp; ++k) {
        for (std::size_t s = 0; s < traces.size(); ++s) {
            const double R = opt.R.value_or(traces[s].noise_sigma * traces[s].noise_sigma);
            UpdateInfo info;
            st = kalman_update(
                st, traces[s].readings[k], [&](Vec2 x) { return h(s, k, x); }, R, opt.kalman, &info);
            if (info.diverged) res.diverged = true;
            if (info.repaired) ++res.repairs;
            if (opt.clamp_to_domain) {
                st.mean.x = std::clamp(st.mean.x, 0.0, cfg.domain_size.x);
                st.mean.y = std::clamp(st.mean.y, 0.0, cfg.domain_size.y);
            }
            Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(st.cov);
            if (!(eig.eigenvalues().minCoeff() > 0.0) || (st.cov - st.cov.transpose()).cwiseAbs().maxCoeff() > 1e-12 * st.cov.cwiseAbs().maxCoeff()) {
                res.all_positive_definite = false;
            }
            res.trajectory.push_back(st);
        }
    }
    res.estimate.method = "KF";
    res.estimate.estimate = st.mean;
    res.estimate.inference_s = sw.seconds();
    if (res.diverged) add_flag(res.estimate.flags, "diverged");
    if (res.repairs > 0) add_flag(res.estimate.flags, "covariance repaired x" + std::to_string(res.repairs));
    score(res.estimate, truth);
    return res;
}

void write_filter_csv(const std::string& path, std::span<const FilterState> trajectory) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out.precision(17);
    out << "step,x,y,cov_xx,cov_xy,cov_yy\n";
    for (const auto& s : trajectory) {
        out << s.steps << "," << s.mean.x << "," << s.mean.y << "," << s.cov(0, 0) << "," << s.cov(0, 1) << ","
            << s.cov(1, 1) << "\n";
    }
}

}  // namespace odorloc
