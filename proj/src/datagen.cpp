#include "odorloc/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <json.hpp>
#include <sstream>

#include "odorloc/response_bank.hpp"

namespace odorloc {

std::vector<double> uniform_times(double total_time, std::size_t count) {
    std::vector<double> t(count);
    if (count == 1) {
        t[0] = total_time;
        return t;
    }
    for (std::size_t k = 0; k < count; ++k) t[k] = total_time * static_cast<double>(k) / static_cast<double>(count - 1);
    return t;
}

std::vector<double> add_noise(std::span<const double> clean, double sigma, std::uint64_t seed) {
    std::vector<double> out(clean.begin(), clean.end());
    if (sigma <= 0.0) return out;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, sigma);
    for (double& v : out) v += n(rng);
    return out;
}

namespace {

void check_times(const SimConfig& cfg, std::span<const double> times) {
    if (times.empty()) throw ConfigError("sample times must not be empty");
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (times[k] < 0.0 || times[k] > cfg.total_time * (1.0 + 1e-12)) {
            throw ConfigError("sample time " + std::to_string(times[k]) + " s lies outside [0, total_time]");
        }
        if (k > 0 && !(times[k] > times[k - 1])) throw ConfigError("sample times must be strictly increasing");
    }
}

}  // namespace

std::vector<SensorTrace> observe_all(const SimConfig& cfg, std::span<const Vec2> sensors, std::span<const double> times,
                                     std::uint64_t seed) {
    validate(cfg);
    check_times(cfg, times);
    for (const Vec2& s : sensors) bilinear_weights(cfg, s);
    RunOptions opts;
    opts.probe_positions.assign(sensors.begin(), sensors.end());
    opts.probe_times.assign(times.begin(), times.end());
    const RunResult run = run_to_time(cfg, opts);
    const double sigma = cfg.noise_sigma_frac * run.peak;

    std::vector<SensorTrace> out;
    for (std::size_t s = 0; s < sensors.size(); ++s) {
        SensorTrace tr;
        tr.sensor_pos = sensors[s];
        tr.times.assign(times.begin(), times.end());
        tr.clean = run.probe_readings[s];
        tr.noise_sigma = sigma;
        tr.rng_seed = derive_seed(seed, s);
        tr.readings = add_noise(tr.clean, sigma, tr.rng_seed);
        out.push_back(std::move(tr));
    }
    return out;
}

SensorTrace observe(const SimConfig& cfg, Vec2 sensor, std::span<const double> times, std::uint64_t seed) {
    const Vec2 one[1] = {sensor};
    return observe_all(cfg, one, times, seed).front();
}

std::vector<SensorTrace> renoise(std::span<const SensorTrace> traces, std::uint64_t seed) {
    std::vector<SensorTrace> out(traces.begin(), traces.end());
    for (std::size_t s = 0; s < out.size(); ++s) {
        out[s].rng_seed = derive_seed(seed, s);
        out[s].readings = add_noise(out[s].clean, out[s].noise_sigma, out[s].rng_seed);
    }
    return out;
}

std::vector<double> downsample(std::span<const double> readings, std::size_t count) {
    if (count == 0) throw ConfigError("down-sampling to zero readings");
    if (readings.size() < count) {
        throw ConfigError("trace has " + std::to_string(readings.size()) + " readings, need at least " +
                          std::to_string(count));
    }
    std::vector<double> out(count);
    if (count == 1) {
        out[0] = readings.back();
        return out;
    }
    const double stride = static_cast<double>(readings.size() - 1) / static_cast<double>(count - 1);
    for (std::size_t k = 0; k < count; ++k) {
        out[k] = readings[static_cast<std::size_t>(std::llround(stride * static_cast<double>(k)))];
    }
    return out;
}

SourceSampler interior_sampler(const SimConfig& cfg, double fraction) {
    const double mx = 0.5 * (1.0 - fraction) * cfg.domain_size.x;
    const double my = 0.5 * (1.0 - fraction) * cfg.domain_size.y;
    const Vec2 lo{mx, my};
    const Vec2 hi{cfg.domain_size.x - mx, cfg.domain_size.y - my};
    return [lo, hi](std::mt19937_64& rng) {
        std::uniform_real_distribution<double> ux(lo.x, hi.x), uy(lo.y, hi.y);
        const double x = ux(rng);
        return Vec2{x, uy(rng)};
    };
}

namespace {

double draw_component(std::mt19937_64& rng, double lo, double hi, int levels) {
    if (!(hi > lo)) return lo;
    if (levels <= 0) return std::uniform_real_distribution<double>(lo, hi)(rng);
    if (levels == 1) return lo;
    const int k = std::uniform_int_distribution<int>(0, levels - 1)(rng);
    return lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(levels - 1);
}

struct WindKey {
    double x, y;
    bool operator<(const WindKey& o) const { return x < o.x || (x == o.x && y < o.y); }
};

struct SharedResponses {
    ResponseBank bank;
    std::vector<double> peaks;
};

}  // namespace

std::vector<DatasetSample> build_dataset(const DatasetSpec& spec) {
    if (spec.count == 0) throw ConfigError("dataset size must be > 0");
    validate(spec.base);
    const std::vector<double> times =
        spec.sample_times.empty() ? uniform_times(spec.base.total_time, kTraceFeatures) : spec.sample_times;
    check_times(spec.base, times);
    if (times.size() < kTraceFeatures) throw ConfigError("need at least 600 sample times per trace");
    const SourceSampler sampler = spec.source_sampler ? spec.source_sampler : interior_sampler(spec.base);
    const Vec2 sensors[1] = {spec.sensor_pos};
    bilinear_weights(spec.base, spec.sensor_pos);

    std::map<WindKey, SharedResponses> shared;
    std::vector<DatasetSample> out;
    out.reserve(spec.count);
    for (std::size_t idx = 0; idx < spec.count; ++idx) {
        const std::uint64_t sample_seed = derive_seed(spec.seed, idx);
        std::mt19937_64 rng(sample_seed);
        const Vec2 src = sampler(rng);
        const Vec2 wind{draw_component(rng, spec.wind.min.x, spec.wind.max.x, spec.wind_levels),
                        draw_component(rng, spec.wind.min.y, spec.wind.max.y, spec.wind_levels)};
        SimConfig cfg = spec.base;
        cfg.source_pos = src;
        cfg.flow = wind;
        validate(cfg);

        std::vector<double> clean;
        double peak = 0.0;
        if (spec.wind_levels > 0) {
            auto it = shared.find({wind.x, wind.y});
            if (it == shared.end()) {
                SharedResponses r{ResponseBank::build(cfg, sensors, times), plateau_peaks(cfg)};
                it = shared.emplace(WindKey{wind.x, wind.y}, std::move(r)).first;
            }
            const CellIndex cell = nearest_cell(cfg, src);
            clean = it->second.bank.trace(0, cell);
            peak = it->second.peaks[linear_index(cfg, cell)];
        } else {
            RunOptions opts;
            opts.probe_positions = {spec.sensor_pos};
            opts.probe_times = times;
            const RunResult run = run_to_time(cfg, opts);
            clean = run.probe_readings[0];
            peak = run.peak;
        }
        const std::vector<double> noisy = add_noise(clean, cfg.noise_sigma_frac * peak, derive_seed(sample_seed, 0));

        DatasetSample s;
        s.features = downsample(noisy, kTraceFeatures);
        s.features.push_back(wind.x);
        s.features.push_back(wind.y);
        s.label = src - spec.sensor_pos;
        s.true_source = src;
        s.sensor_pos = spec.sensor_pos;
        s.wind = wind;
        s.seed = sample_seed;
        out.push_back(std::move(s));
    }
    return out;
}

SplitResult split(std::span<const DatasetSample> dataset, double train_frac, std::uint64_t seed) {
    if (dataset.empty()) throw ConfigError("cannot split an empty dataset");
    if (!(train_frac > 0.0 && train_frac < 1.0)) throw ConfigError("train fraction must lie in (0, 1)");
    std::vector<std::size_t> idx(dataset.size());
    for (std::size_t k = 0; k < idx.size(); ++k) idx[k] = k;
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n = dataset.size();
    std::size_t ntrain = static_cast<std::size_t>(std::floor(train_frac * static_cast<double>(n) + 1e-9));
    ntrain = std::clamp<std::size_t>(ntrain, 1, n);
    SplitResult r;
    for (std::size_t k = 0; k < n; ++k) (k < ntrain ? r.train : r.test).push_back(dataset[idx[k]]);
    r.degenerate = r.test.empty() || r.train.empty();
    return r;
}

FeatureScaler FeatureScaler::fit(std::span<const DatasetSample> samples) {
    FeatureScaler s;
    double m = 0.0;
    for (const auto& smp : samples)
        for (std::size_t k = 0; k < kTraceFeatures && k < smp.features.size(); ++k) m = std::max(m, std::abs(smp.features[k]));
    s.conc_scale = m > 0.0 ? m : 1.0;
    return s;
}

std::vector<double> FeatureScaler::normalize(std::span<const double> f) const {
    if (f.size() != kFeatureCount) {
        throw ConfigError("feature vector has " + std::to_string(f.size()) + " entries, expected 602");
    }
    std::vector<double> out(f.begin(), f.end());
    for (std::size_t k = 0; k < kTraceFeatures; ++k) out[k] /= conc_scale;
    out[kTraceFeatures] *= velocity_scale;
    out[kTraceFeatures + 1] *= velocity_scale;
    return out;
}

std::vector<double> FeatureScaler::denormalize(std::span<const double> n) const {
    if (n.size() != kFeatureCount) throw ConfigError("normalized feature vector must have 602 entries");
    std::vector<double> out(n.begin(), n.end());
    for (std::size_t k = 0; k < kTraceFeatures; ++k) out[k] *= conc_scale;
    out[kTraceFeatures] /= velocity_scale;
    out[kTraceFeatures + 1] /= velocity_scale;
    return out;
}

std::vector<double> trace_features(const SensorTrace& trace, Vec2 wind) {
    std::vector<double> f = downsample(trace.readings, kTraceFeatures);
    f.push_back(wind.x);
    f.push_back(wind.y);
    return f;
}

void write_dataset_csv(const std::string& path, std::span<const DatasetSample> samples) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out.precision(17);
    for (std::size_t k = 0; k < kFeatureCount; ++k) out << "f" << k << ",";
    out << "label_dx,label_dy,source_x,source_y,sensor_x,sensor_y,wind_x,wind_y,seed\n";
    for (const auto& s : samples) {
        for (double v : s.features) out << v << ",";
        out << s.label.x << "," << s.label.y << "," << s.true_source.x << "," << s.true_source.y << ","
            << s.sensor_pos.x << "," << s.sensor_pos.y << "," << s.wind.x << "," << s.wind.y << "," << s.seed << "\n";
    }
}

std::vector<DatasetSample> read_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read '" + path + "'");
    std::string line;
    std::getline(in, line);
    std::vector<DatasetSample> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> tok;
        std::istringstream ls(line);
        std::string t;
        while (std::getline(ls, t, ',')) tok.push_back(t);
        if (tok.size() != kFeatureCount + 9) throw std::runtime_error("'" + path + "': bad dataset row");
        DatasetSample s;
        for (std::size_t k = 0; k < kFeatureCount; ++k) s.features.push_back(std::stod(tok[k]));
        std::size_t o = kFeatureCount;
        s.label = {std::stod(tok[o]), std::stod(tok[o + 1])};
        s.true_source = {std::stod(tok[o + 2]), std::stod(tok[o + 3])};
        s.sensor_pos = {std::stod(tok[o + 4]), std::stod(tok[o + 5])};
        s.wind = {std::stod(tok[o + 6]), std::stod(tok[o + 7])};
        s.seed = std::stoull(tok[o + 8]);
        out.push_back(std::move(s));
    }
    return out;
}

void write_dataset_sidecar(const std::string& path, const FeatureScaler& scaler, std::uint64_t master_seed,
                           const DatasetSpec& spec) {
    nlohmann::json j;
    j["conc_scale"] = scaler.conc_scale;
    j["length_scale"] = scaler.length_scale;
    j["velocity_scale"] = scaler.velocity_scale;
    j["master_seed"] = master_seed;
    j["count"] = spec.count;
    j["sensor_pos"] = {spec.sensor_pos.x, spec.sensor_pos.y};
    j["wind_min"] = {spec.wind.min.x, spec.wind.min.y};
    j["wind_max"] = {spec.wind.max.x, spec.wind.max.y};
    j["wind_levels"] = spec.wind_levels;
    j["config"] = format_config(spec.base);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << j.dump(2) << "\n";
}

}  // namespace odorloc
