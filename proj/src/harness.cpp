#include "odorloc/harness.hpp"

#include <sys/utsname.h>

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "odorloc/response_bank.hpp"

namespace odorloc {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_on(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(trim(item));
    return out;
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        const double d = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError("'" + key + "': expected a number, got '" + v + "'");
    }
}

long to_int(const std::string& key, const std::string& v) {
    const double d = to_double(key, v);
    if (d != std::floor(d)) throw ConfigError("'" + key + "': expected an integer, got '" + v + "'");
    return static_cast<long>(d);
}

Vec2 to_pair(const std::string& key, const std::string& v) {
    const auto parts = split_on(v, ',');
    if (parts.size() != 2) throw ConfigError("'" + key + "': expected x,y");
    return {to_double(key, parts[0]), to_double(key, parts[1])};
}

void apply(const ConfigOverrides& o, SimConfig& c) {
    if (o.domain_size) c.domain_size = *o.domain_size;
    if (o.nx) c.nx = *o.nx;
    if (o.ny) c.ny = *o.ny;
    if (o.diffusion) c.diffusion = *o.diffusion;
    if (o.flow) c.flow = *o.flow;
    if (o.degradation) c.degradation = *o.degradation;
    if (o.emission) c.emission = *o.emission;
    if (o.source_pos) c.source_pos = *o.source_pos;
    if (o.injection_duration) c.injection_duration = *o.injection_duration;
    if (o.dt) c.dt = *o.dt;
    if (o.total_time) c.total_time = *o.total_time;
    if (o.boundary) c.boundary = *o.boundary;
    if (o.noise_sigma_frac) c.noise_sigma_frac = *o.noise_sigma_frac;
}

double median_of(std::vector<double> v) {
    if (v.empty()) return kNaN;
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string describe(const std::exception& e) {
    if (dynamic_cast<const ConfigError*>(&e)) return std::string("config error: ") + e.what();
    if (dynamic_cast<const NumericalError*>(&e)) return std::string("numerical failure: ") + e.what();
    return std::string("error: ") + e.what();
}

bool same(double a, double b) { return a == b || (std::isnan(a) && std::isnan(b)); }

nlohmann::json num(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }
double num_from(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

}  // namespace

Scenario default_scenario() {
    Scenario s;
    s.cfg = make_config();
    return s;
}

void validate(const Scenario& s) {
    validate(s.cfg);
    if (s.sensors.empty()) throw ConfigError("scenario needs at least one sensor");
    for (Vec2 p : s.sensors) {
        if (!inside_domain(s.cfg, p)) throw ConfigError("sensor outside the domain");
    }
    if (s.sample_count < 2) throw ConfigError("samples must be >= 2");
    if (s.methods.empty()) throw ConfigError("no methods requested");
    for (const auto& m : s.methods) {
        if (std::find(kMethods.begin(), kMethods.end(), m) == kMethods.end()) {
            throw ConfigError("unknown method '" + m + "' (known: KF, MAP, MLP, PINN, RL)");
        }
    }
    if (s.mlp_sensor >= s.sensors.size()) throw ConfigError("mlp sensor index out of range");
    if (!(s.mlp_train_frac > 0.0 && s.mlp_train_frac < 1.0)) throw ConfigError("mlp train fraction must be in (0, 1)");
    if (s.rl_grid < 2) throw ConfigError("rl grid must be >= 2");
}

Scenario scenario_from_text(const std::string& text, Scenario s) {
    std::istringstream in(text);
    std::string line, sim;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string body = line;
        if (const auto hash = body.find('#'); hash != std::string::npos) body.erase(hash);
        body = trim(body);
        const auto eq = body.find('=');
        const std::string key = eq == std::string::npos ? "" : trim(body.substr(0, eq));
        const std::string v = eq == std::string::npos ? "" : trim(body.substr(eq + 1));
        bool used = true;
        if (key == "sensors") {
            s.sensors.clear();
            for (const auto& p : split_on(v, ';')) {
                if (!p.empty()) s.sensors.push_back(to_pair(key, p));
            }
        } else if (key == "samples") s.sample_count = static_cast<std::size_t>(to_int(key, v));
        else if (key == "seed") s.seed = static_cast<std::uint64_t>(to_int(key, v));
        else if (key == "name") s.name = v;
        else if (key == "methods") {
            s.methods.clear();
            for (auto m : split_on(v, ',')) {
                std::transform(m.begin(), m.end(), m.begin(), [](unsigned char c) { return std::toupper(c); });
                if (!m.empty()) s.methods.push_back(m);
            }
        } else if (key == "map_resolution") s.map.candidate_resolution = static_cast<int>(to_int(key, v));
        else if (key == "pinn_epochs") s.pinn.epochs = static_cast<int>(to_int(key, v));
        else if (key == "pinn_collocation") s.pinn.collocation = static_cast<std::size_t>(to_int(key, v));
        else if (key == "pinn_lambda_phy") s.pinn.lambda_phy = to_double(key, v);
        else if (key == "pinn_multi_start") s.pinn.multi_start = v == "true" || v == "1";
        else if (key == "mlp_epochs") s.mlp.epochs = static_cast<int>(to_int(key, v));
        else if (key == "mlp_samples") s.mlp_samples = static_cast<std::size_t>(to_int(key, v));
        else if (key == "mlp_wind_levels") s.mlp_wind_levels = static_cast<int>(to_int(key, v));
        else if (key == "rl_episodes") s.dqn.episodes = static_cast<int>(to_int(key, v));
        else if (key == "rl_grid") s.rl_grid = static_cast<int>(to_int(key, v));
        else if (key == "rl_truth") s.rl_truth = to_pair(key, v);
        else if (key == "rl_target_network") s.dqn.target_network = v == "true" || v == "1";
        else used = false;
        // keep line numbers of the simulation keys
        sim += used ? "\n" : line + "\n";
    }
    apply(parse_config_text(sim), s.cfg);
    validate(s);
    return s;
}

Scenario read_scenario_file(const std::string& path, Scenario base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return scenario_from_text(ss.str(), std::move(base));
}

const SourceEstimate* MethodRow::representative() const {
    if (runs.empty()) return nullptr;
    const SourceEstimate* best = &runs.front();
    for (const auto& r : runs) {
        if (std::abs(r.error_m - median_error_m) < std::abs(best->error_m - median_error_m)) best = &r;
    }
    return best;
}

bool BenchmarkReport::has_failures() const {
    return std::any_of(rows.begin(), rows.end(), [](const MethodRow& r) { return !r.failures.empty(); });
}

const MethodRow* BenchmarkReport::row(const std::string& method) const {
    for (const auto& r : rows) {
        if (r.method == method) return &r;
    }
    return nullptr;
}

void finalize(BenchmarkReport& report) {
    for (auto& row : report.rows) {
        std::vector<double> err;
        double inf = 0.0;
        for (const auto& r : row.runs) {
            err.push_back(r.error_m);
            inf += r.inference_s;
        }
        row.repetitions = row.runs.size();
        row.median_error_m = median_of(err);
        row.mean_error_m = err.empty() ? kNaN : std::accumulate(err.begin(), err.end(), 0.0) / static_cast<double>(err.size());
        row.mean_inference_s = err.empty() ? kNaN : inf / static_cast<double>(err.size());
    }
    std::sort(report.rows.begin(), report.rows.end(), [](const MethodRow& a, const MethodRow& b) { return a.method < b.method; });
}

nlohmann::json environment_fingerprint() {
    nlohmann::json j;
#if defined(__clang__)
    j["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
    j["compiler"] = std::string("gcc ") + __VERSION__;
#else
    j["compiler"] = "unknown";
#endif
    j["cxx_standard"] = static_cast<long>(__cplusplus);
    j["eigen"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                 std::to_string(EIGEN_MINOR_VERSION);
#ifdef NDEBUG
    j["assertions"] = false;
#else
    j["assertions"] = true;
#endif
    j["hardware_threads"] = std::thread::hardware_concurrency();
    utsname u{};
    if (uname(&u) == 0) {
        j["os"] = std::string(u.sysname) + " " + u.release;
        j["machine"] = u.machine;
    }
    return j;
}

std::uint64_t repetition_seed(const Scenario& s, int r) { return derive_seed(s.seed, 1000 + static_cast<std::uint64_t>(r)); }

std::vector<SensorTrace> scenario_traces(const Scenario& s, std::span<const SensorTrace> clean, int r) {
    return renoise(clean, repetition_seed(s, r));
}

BenchmarkReport run_scenario(const Scenario& s, const BenchOptions& opt) {
    validate(s);
    if (opt.repetitions < 1) throw ConfigError("repetitions must be >= 1");
    if (opt.first_repetition < 0) throw ConfigError("first repetition must be >= 0");
    const int r0 = opt.first_repetition, r1 = r0 + opt.repetitions;
    auto say = [&](const std::string& m) {
        if (opt.progress) opt.progress(m);
    };
    auto wants = [&](const std::string& m) { return std::find(s.methods.begin(), s.methods.end(), m) != s.methods.end(); };
    auto artifact = [&](const std::string& name) { return (std::filesystem::path(*opt.artifact_dir) / name).string(); };
    if (opt.artifact_dir) std::filesystem::create_directories(*opt.artifact_dir);

    BenchmarkReport report;
    report.scenario = s.name;
    report.environment = environment_fingerprint();
    std::map<std::string, MethodRow> rows;
    for (const auto& m : s.methods) rows[m].method = m;
    auto fail_all = [&](const std::string& m, const std::string& why) {
        for (int r = r0; r < r1; ++r) rows[m].failures.push_back("rep " + std::to_string(r) + ": " + why);
    };

    const Vec2 truth = s.truth();
    const auto times = uniform_times(s.cfg.total_time, s.sample_count);
    const bool trace_methods = wants("MAP") || wants("KF") || wants("PINN") || wants("MLP");
    std::vector<SensorTrace> clean;
    if (trace_methods) {
        say("simulating sensor traces");
        clean = observe_all(s.cfg, s.sensors, times, s.seed);
        report.notes["noise_sigma"] = clean.front().noise_sigma;
    }

    std::optional<ResponseBank> bank;
    double bank_s = 0.0;
    if (wants("MAP") || wants("KF")) {
        say("building response bank");
        try {
            const Stopwatch sw;
            bank = ResponseBank::build(s.cfg, s.sensors, times);
            bank_s = sw.seconds();
        } catch (const std::exception& e) {
            for (const char* m : {"MAP", "KF"}) {
                if (wants(m)) fail_all(m, describe(e));
            }
        }
    }

    std::optional<MlpEstimator> mlp;
    if (wants("MLP")) {
        try {
            say("generating MLP dataset");
            DatasetSpec spec;
            spec.base = s.cfg;
            spec.sensor_pos = s.sensors[s.mlp_sensor];
            spec.count = s.mlp_samples;
            spec.wind = s.mlp_wind;
            spec.seed = derive_seed(s.seed, 77);
            spec.wind_levels = s.mlp_wind_levels;
            spec.sample_times = times;
            const Stopwatch gen;
            const auto data = build_dataset(spec);
            report.notes["mlp_dataset_seconds"] = gen.seconds();
            const SplitResult sp = split(data, s.mlp_train_frac, derive_seed(s.seed, 78));
            if (sp.degenerate) throw ConfigError("MLP split leaves one side empty");
            say("training MLP");
            MlpOptions mo = s.mlp;
            mo.seed = derive_seed(s.seed, 79);
            const MlpTraining t = train_mlp(sp.train, sp.test, mo);
            const auto errs = mlp_errors(t.estimator, sp.test);
            report.notes["mlp_train_samples"] = sp.train.size();
            report.notes["mlp_test_samples"] = sp.test.size();
            report.notes["mlp_test_median_error_m"] = median_of(errs);
            report.notes["mlp_train_seconds"] = t.seconds;
            rows["MLP"].training_s = t.seconds;
            if (opt.artifact_dir) {
                write_training_curve(artifact("mlp_curve.csv"), t.history);
                save_mlp(artifact("mlp.json"), t.estimator);
                write_dataset_sidecar(artifact("mlp_dataset.json"), t.estimator.scaler, spec.seed, spec);
            }
            mlp = t.estimator;
        } catch (const std::exception& e) {
            fail_all("MLP", describe(e));
        }
    }

    for (int r = r0; r < r1 && trace_methods; ++r) {
        const auto traces = scenario_traces(s, clean, r);
        const bool first = r == r0 && opt.artifact_dir.has_value();
        if (wants("MAP") && bank) {
            try {
                MapResult m = map_estimate(traces, *bank, truth, s.map);
                m.estimate.training_s = bank_s;
                rows["MAP"].runs.push_back(m.estimate);
                if (first) {
                    write_posterior_csv(artifact("posterior.csv"), m.posterior);
                    write_posterior_pgm(artifact("posterior.pgm"), m.posterior);
                }
                if (r == r0) report.notes["map_argmax"] = m.posterior.argmax;
            } catch (const std::exception& e) {
                rows["MAP"].failures.push_back("rep " + std::to_string(r) + ": " + describe(e));
            }
        }
        if (wants("KF") && bank) {
            try {
                FilterResult f = run_filter(traces, bank_observation_model(*bank), s.cfg,
                                            initial_state(s.cfg, s.filter_sigma0), truth, s.filter);
                if (f.diverged) throw NumericalError("filter diverged");
                f.estimate.training_s = bank_s;
                if (!f.all_positive_definite) add_flag(f.estimate.flags, "covariance lost definiteness");
                rows["KF"].runs.push_back(f.estimate);
                if (first) write_filter_csv(artifact("kf_trajectory.csv"), f.trajectory);
            } catch (const std::exception& e) {
                rows["KF"].failures.push_back("rep " + std::to_string(r) + ": " + describe(e));
            }
        }
        if (wants("PINN")) {
            try {
                say("training PINN, repetition " + std::to_string(r + 1));
                PinnOptions po = s.pinn;
                po.seed = s.pinn.seed + static_cast<std::uint64_t>(r);
                const PinnTraining p = train_pinn(traces, s.cfg, truth, po);
                rows["PINN"].runs.push_back(p.estimate);
                if (first) {
                    write_training_curve(artifact("pinn_curve.csv"), p.history);
                    save_pinn(artifact("pinn.json"), p.model);
                }
            } catch (const std::exception& e) {
                rows["PINN"].failures.push_back("rep " + std::to_string(r) + ": " + describe(e));
            }
        }
        if (wants("MLP") && mlp) {
            try {
                SourceEstimate e = mlp_predict(*mlp, traces[s.mlp_sensor], s.cfg.flow, truth);
                e.training_s = rows["MLP"].training_s;
                rows["MLP"].runs.push_back(e);
            } catch (const std::exception& e) {
                rows["MLP"].failures.push_back("rep " + std::to_string(r) + ": " + describe(e));
            }
        }
    }

    if (wants("RL")) {
        const Cell src = cell_of(s.rl_truth, s.cfg.domain_size, s.rl_grid);
        double train_total = 0.0;
        for (int r = r0; r < r1; ++r) {
            try {
                say("training DQN, repetition " + std::to_string(r + 1));
                const GridEnv env(s.rl_grid, src, s.dqn.max_steps);
                DqnOptions d = s.dqn;
                d.seed = s.dqn.seed + static_cast<std::uint64_t>(r);
                const DqnTraining t = train_dqn(env, d);
                if (t.diverged) throw NumericalError("Q-values diverged");
                train_total += t.seconds;
                Rollout ro = rollout(t.net, env, s.rl_start, s.cfg.domain_size, s.rl_truth);
                ro.estimate.training_s = t.seconds;
                rows["RL"].runs.push_back(ro.estimate);
                if (r == r0) {
                    const std::size_t w = std::min<std::size_t>(50, t.log.size());
                    double a = 0.0, b = 0.0;
                    for (std::size_t k = 0; k < w; ++k) {
                        a += t.log[k].steps;
                        b += t.log[t.log.size() - 1 - k].steps;
                    }
                    report.notes["rl_first_window_mean_steps"] = a / static_cast<double>(w);
                    report.notes["rl_last_window_mean_steps"] = b / static_cast<double>(w);
                    if (opt.artifact_dir) {
                        write_episode_log(artifact("dqn_log.csv"), t.log);
                        save_policy(artifact("dqn.json"), t.net, env);
                    }
                }
            } catch (const std::exception& e) {
                rows["RL"].failures.push_back("rep " + std::to_string(r) + ": " + describe(e));
            }
        }
        if (!rows["RL"].runs.empty()) rows["RL"].training_s = train_total / static_cast<double>(rows["RL"].runs.size());
    }
    if (wants("MAP")) rows["MAP"].training_s = bank_s;
    if (wants("KF")) rows["KF"].training_s = bank_s;

    for (auto& [name, row] : rows) report.rows.push_back(std::move(row));
    finalize(report);
    return report;
}

ReportFormat report_format_from_string(const std::string& s) {
    if (s == "csv") return ReportFormat::Csv;
    if (s == "json") return ReportFormat::Json;
    if (s == "md" || s == "markdown") return ReportFormat::Markdown;
    throw ConfigError("unknown report format '" + s + "' (csv, json, md)");
}

nlohmann::json estimate_to_json(const SourceEstimate& e) {
    return {{"method", e.method},
            {"estimate", {e.estimate.x, e.estimate.y}},
            {"truth", {e.truth.x, e.truth.y}},
            {"error_m", num(e.error_m)},
            {"inference_s", num(e.inference_s)},
            {"training_s", num(e.training_s)},
            {"flags", e.flags}};
}

SourceEstimate estimate_from_json(const nlohmann::json& j) {
    SourceEstimate e;
    e.method = j.at("method").get<std::string>();
    e.estimate = {j.at("estimate")[0].get<double>(), j.at("estimate")[1].get<double>()};
    e.truth = {j.at("truth")[0].get<double>(), j.at("truth")[1].get<double>()};
    e.error_m = num_from(j.at("error_m"));
    e.inference_s = num_from(j.at("inference_s"));
    e.training_s = num_from(j.at("training_s"));
    e.flags = j.at("flags").get<std::string>();
    return e;
}

nlohmann::json report_to_json(const BenchmarkReport& report) {
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& r : report.rows) {
        nlohmann::json runs = nlohmann::json::array();
        for (const auto& e : r.runs) runs.push_back(estimate_to_json(e));
        rows.push_back({{"method", r.method},
                        {"runs", runs},
                        {"median_error_m", num(r.median_error_m)},
                        {"mean_error_m", num(r.mean_error_m)},
                        {"mean_inference_s", num(r.mean_inference_s)},
                        {"training_s", num(r.training_s)},
                        {"repetitions", r.repetitions},
                        {"failures", r.failures}});
    }
    return {{"scenario", report.scenario}, {"environment", report.environment}, {"notes", report.notes}, {"rows", rows}};
}

BenchmarkReport report_from_json(const nlohmann::json& j) {
    try {
        BenchmarkReport rep;
        rep.scenario = j.at("scenario").get<std::string>();
        rep.environment = j.at("environment");
        rep.notes = j.at("notes");
        for (const auto& r : j.at("rows")) {
            MethodRow row;
            row.method = r.at("method").get<std::string>();
            for (const auto& e : r.at("runs")) row.runs.push_back(estimate_from_json(e));
            row.median_error_m = num_from(r.at("median_error_m"));
            row.mean_error_m = num_from(r.at("mean_error_m"));
            row.mean_inference_s = num_from(r.at("mean_inference_s"));
            row.training_s = num_from(r.at("training_s"));
            row.repetitions = r.at("repetitions").get<std::size_t>();
            row.failures = r.at("failures").get<std::vector<std::string>>();
            rep.rows.push_back(std::move(row));
        }
        return rep;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("malformed report: ") + e.what());
    }
}

bool operator==(const SourceEstimate& a, const SourceEstimate& b) {
    return a.method == b.method && a.estimate == b.estimate && a.truth == b.truth && same(a.error_m, b.error_m) &&
           same(a.inference_s, b.inference_s) && same(a.training_s, b.training_s) && a.flags == b.flags;
}

bool operator==(const MethodRow& a, const MethodRow& b) {
    return a.method == b.method && a.runs == b.runs && same(a.median_error_m, b.median_error_m) &&
           same(a.mean_error_m, b.mean_error_m) && same(a.mean_inference_s, b.mean_inference_s) &&
           same(a.training_s, b.training_s) && a.repetitions == b.repetitions && a.failures == b.failures;
}

bool operator==(const BenchmarkReport& a, const BenchmarkReport& b) {
    return a.scenario == b.scenario && a.rows == b.rows && a.environment == b.environment && a.notes == b.notes;
}

namespace {

std::string sci(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3e", v);
    return buf;
}

std::string pair_str(Vec2 v) { return "[" + sci(v.x) + ", " + sci(v.y) + "]"; }

std::string joined(const std::vector<std::string>& v, const std::string& sep) {
    std::string out;
    for (std::size_t k = 0; k < v.size(); ++k) out += (k ? sep : "") + v[k];
    return out;
}

std::string csv_field(std::string s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

}  // namespace

std::string report_to_string(const BenchmarkReport& report, ReportFormat format) {
    std::ostringstream os;
    switch (format) {
        case ReportFormat::Json: os << report_to_json(report).dump(2) << "\n"; break;
        case ReportFormat::Csv: {
            os.precision(17);
            os << "method,estimate_x,estimate_y,truth_x,truth_y,median_error_m,mean_error_m,mean_inference_s,training_s,"
                  "repetitions,flags,failures\n";
            for (const auto& r : report.rows) {
                const SourceEstimate* e = r.representative();
                os << r.method << ",";
                if (e) os << e->estimate.x << "," << e->estimate.y << "," << e->truth.x << "," << e->truth.y;
                else os << ",,,";
                os << "," << r.median_error_m << "," << r.mean_error_m << "," << r.mean_inference_s << "," << r.training_s
                   << "," << r.repetitions << "," << csv_field(e ? e->flags : "") << ","
                   << csv_field(joined(r.failures, "; ")) << "\n";
            }
            break;
        }
        case ReportFormat::Markdown: {
            os << "Method | Estimated Source | True Source | Error (m)\n";
            os << "--- | --- | --- | ---\n";
            for (const auto& r : report.rows) {
                const SourceEstimate* e = r.representative();
                os << r.method << " | " << (e ? pair_str(e->estimate) : "failed") << " | "
                   << (e ? pair_str(e->truth) : "-") << " | " << sci(r.median_error_m) << "\n";
            }
            if (!report.rows.empty()) {
                os << "\nMethod | Median Error (m) | Mean Error (m) | Inference (s) | Training (s) | Runs | Notes\n";
                os << "--- | --- | --- | --- | --- | --- | ---\n";
                for (const auto& r : report.rows) {
                    std::string notes = joined(r.failures, "; ");
                    if (const SourceEstimate* e = r.representative(); e && !e->flags.empty()) {
                        notes = e->flags + (notes.empty() ? "" : "; " + notes);
                    }
                    os << r.method << " | " << sci(r.median_error_m) << " | " << sci(r.mean_error_m) << " | "
                       << sci(r.mean_inference_s) << " | " << sci(r.training_s) << " | " << r.repetitions << " | " << notes
                       << "\n";
                }
            }
            break;
        }
    }
    return os.str();
}

void export_report(const BenchmarkReport& report, ReportFormat format, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << report_to_string(report, format);
    if (!out) throw std::runtime_error("write to '" + path + "' failed");
}

namespace {

struct Image {
    int w = 0, h = 0;
    std::vector<unsigned char> px;

    void set(int x, int y, unsigned char v) {
        if (x >= 0 && x < w && y >= 0 && y < h) px[static_cast<std::size_t>(y) * w + x] = v;
    }
};

// Magnified copy of a pgm_pixels image.
Image zoomed(const std::vector<unsigned char>& src, int nx, int ny, int zoom) {
    Image im{nx * zoom, ny * zoom, std::vector<unsigned char>(static_cast<std::size_t>(nx * zoom) * ny * zoom)};
    for (int y = 0; y < im.h; ++y) {
        for (int x = 0; x < im.w; ++x) im.px[static_cast<std::size_t>(y) * im.w + x] = src[static_cast<std::size_t>(y / zoom) * nx + x / zoom];
    }
    return im;
}

// Cross around a block (column i, row j counted from the bottom), leaving the
// block itself untouched.
void cross(Image& im, int i, int j, int zoom, int ny, unsigned char v) {
    const int x0 = i * zoom, y0 = (ny - 1 - j) * zoom;
    const int arm = 3 * zoom;
    for (int d = 1; d <= arm; ++d) {
        for (int t = 0; t < zoom; ++t) {
            im.set(x0 - d, y0 + t, v);
            im.set(x0 + zoom - 1 + d, y0 + t, v);
            im.set(x0 + t, y0 - d, v);
            im.set(x0 + t, y0 + zoom - 1 + d, v);
        }
    }
}

void write_image(const std::string& path, const Image& im) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << "P5\n" << im.w << " " << im.h << "\n255\n";
    out.write(reinterpret_cast<const char*>(im.px.data()), static_cast<std::streamsize>(im.px.size()));
}

std::string time_tag(double t) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", t);
    return buf;
}

}  // namespace

std::vector<unsigned char> posterior_marker_pixels(const Posterior& post, int zoom, int& width, int& height) {
    if (zoom < 1) throw ConfigError("zoom must be >= 1");
    std::vector<double> p(post.log_posterior.size());
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = post.probability(k);
    Image im = zoomed(pgm_pixels(p, post.nc, post.nc), post.nc, post.nc, zoom);
    const int i = static_cast<int>(post.argmax % static_cast<std::size_t>(post.nc));
    const int j = static_cast<int>(post.argmax / static_cast<std::size_t>(post.nc));
    cross(im, i, j, zoom, post.nc, 128);
    width = im.w;
    height = im.h;
    return im.px;
}

FigureOutput emit_figures(const Scenario& s, const FigureInputs& in, const std::string& out_dir) {
    std::filesystem::create_directories(out_dir);
    auto path = [&](const std::string& n) { return (std::filesystem::path(out_dir) / n).string(); };
    FigureOutput out;

    std::vector<double> snaps;
    for (double t : in.snapshot_times) {
        if (t > 0.0 && t <= s.cfg.total_time + 1e-12) snaps.push_back(t);
        else out.warnings.push_back("snapshot time " + time_tag(t) + " s outside (0, " + time_tag(s.cfg.total_time) + "], skipped");
    }
    const bool overlay = !in.estimates.empty();
    const double t_overlay = std::min(s.cfg.injection_duration, s.cfg.total_time);
    RunOptions ro;
    ro.snapshot_times = snaps;
    if (overlay) ro.snapshot_times.push_back(t_overlay);
    std::sort(ro.snapshot_times.begin(), ro.snapshot_times.end());
    ro.snapshot_times.erase(std::unique(ro.snapshot_times.begin(), ro.snapshot_times.end()), ro.snapshot_times.end());
    RunResult run;
    if (!ro.snapshot_times.empty()) run = run_to_time(s.cfg, ro);
    auto snapshot_at = [&](double t) -> const ConcentrationField& {
        for (std::size_t k = 0; k < ro.snapshot_times.size(); ++k) {
            if (ro.snapshot_times[k] == t) return run.snapshots[k];
        }
        throw std::logic_error("snapshot missing");
    };

    for (double t : snaps) {
        const auto& f = snapshot_at(t);
        const std::string base = "field_t" + time_tag(t);
        write_field_csv(path(base + ".csv"), f);
        write_pgm(path(base + ".pgm"), f.values(), f.nx(), f.ny());
        out.files.push_back(path(base + ".csv"));
        out.files.push_back(path(base + ".pgm"));
    }

    if (in.posterior) {
        int w = 0, h = 0;
        Image im;
        im.px = posterior_marker_pixels(*in.posterior, 8, w, h);
        im.w = w;
        im.h = h;
        write_image(path("posterior_map.pgm"), im);
        write_posterior_csv(path("posterior.csv"), *in.posterior);
        out.files.push_back(path("posterior_map.pgm"));
        out.files.push_back(path("posterior.csv"));
    } else {
        out.warnings.push_back("no posterior available, posterior map skipped");
    }

    if (overlay) {
        const auto& f = snapshot_at(t_overlay);
        const int zoom = 8;
        Image im = zoomed(pgm_pixels(f.values(), f.nx(), f.ny()), f.nx(), f.ny(), zoom);
        std::ofstream csv(path("estimates.csv"));
        if (!csv) throw std::runtime_error("cannot write '" + path("estimates.csv") + "'");
        csv.precision(17);
        csv << "method,estimate_x,estimate_y,truth_x,truth_y,error_m\n";
        for (const auto& e : in.estimates) {
            const CellIndex c = nearest_cell(s.cfg, e.estimate);
            cross(im, c.i, c.j, zoom, f.ny(), 0);
            csv << csv_field(e.method) << "," << e.estimate.x << "," << e.estimate.y << "," << e.truth.x << ","
                << e.truth.y << "," << e.error_m << "\n";
        }
        const CellIndex t = nearest_cell(s.cfg, s.truth());
        cross(im, t.i, t.j, zoom, f.ny(), 255);
        write_image(path("estimates_overlay.pgm"), im);
        out.files.push_back(path("estimates.csv"));
        out.files.push_back(path("estimates_overlay.pgm"));
    }
    return out;
}

}  // namespace odorloc
