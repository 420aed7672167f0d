#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "odorloc/grid_pde.hpp"

namespace odorloc {

/// Time series of readings at one sensor. readings carries the additive
/// Gaussian noise, clean the noise-free samples.
struct SensorTrace {
    Vec2 sensor_pos;
    std::vector<double> times;
    std::vector<double> readings;
    std::vector<double> clean;
    double noise_sigma = 0.0;
    std::uint64_t rng_seed = 0;
};

/// `count` equally spaced times over [0, total_time], endpoints included.
std::vector<double> uniform_times(double total_time, std::size_t count = 600);

/// Adds i.i.d. N(0, sigma^2) noise; deterministic in seed.
std::vector<double> add_noise(std::span<const double> clean, double sigma, std::uint64_t seed);

/// Simulates once and samples every sensor at the given times. The noise
/// standard deviation is noise_sigma_frac times the space-time maximum of the
/// clean field and is shared by all sensors; sensor s draws its noise from
/// derive_seed(seed, s).
std::vector<SensorTrace> observe_all(const SimConfig& cfg, std::span<const Vec2> sensors, std::span<const double> times,
                                     std::uint64_t seed);

SensorTrace observe(const SimConfig& cfg, Vec2 sensor, std::span<const double> times, std::uint64_t seed);

/// Re-draws the noise of existing traces with a new seed; the clean samples
/// and sigma are reused.
std::vector<SensorTrace> renoise(std::span<const SensorTrace> traces, std::uint64_t seed);

/// Uniform stride down-sampling to exactly `count` values (first and last
/// samples kept).
std::vector<double> downsample(std::span<const double> readings, std::size_t count);

inline constexpr std::size_t kTraceFeatures = 600;
inline constexpr std::size_t kFeatureCount = kTraceFeatures + 2;

struct DatasetSample {
    std::vector<double> features;  // 600 readings, then u_x, u_y (SI)
    Vec2 label;                    // true_source - sensor_pos, m
    Vec2 true_source;
    Vec2 sensor_pos;
    Vec2 wind;
    std::uint64_t seed = 0;
};

struct WindRange {
    Vec2 min{0.0, 0.0};
    Vec2 max{1e-6, 0.0};
};

using SourceSampler = std::function<Vec2(std::mt19937_64&)>;

/// Uniform over the central `fraction` of the domain in each axis.
SourceSampler interior_sampler(const SimConfig& cfg, double fraction = 0.8);

struct DatasetSpec {
    SimConfig base;
    Vec2 sensor_pos{2e-6, 2e-6};
    std::size_t count = 4000;
    WindRange wind;
    SourceSampler source_sampler;  // defaults to interior_sampler(base)
    std::uint64_t seed = 0;
    /// 0: continuous wind and a fresh simulation per sample. L > 0: each wind
    /// component takes one of L evenly spaced levels, and samples sharing a
    /// wind reuse one set of adjoint responses and plateau peaks.
    int wind_levels = 0;
    /// Sample times for each trace before down-sampling; uniform_times(total,
    /// 600) when empty.
    std::vector<double> sample_times;
};

std::vector<DatasetSample> build_dataset(const DatasetSpec& spec);

struct SplitResult {
    std::vector<DatasetSample> train;
    std::vector<DatasetSample> test;
    bool degenerate = false;  // one side empty
};

/// Deterministic shuffled split; the train side gets floor(frac * n) samples,
/// at least one.
SplitResult split(std::span<const DatasetSample> dataset, double train_frac, std::uint64_t seed);

/// Feature and label scaling for training: concentrations divided by the
/// dataset-wide maximum reading, winds and offsets expressed in micrometres.
struct FeatureScaler {
    double conc_scale = 1.0;
    double length_scale = 1e6;
    double velocity_scale = 1e6;

    static FeatureScaler fit(std::span<const DatasetSample> samples);

    std::vector<double> normalize(std::span<const double> features) const;
    std::vector<double> denormalize(std::span<const double> normalized) const;
    Vec2 normalize_offset(Vec2 m) const { return length_scale * m; }
    Vec2 denormalize_offset(Vec2 n) const { return (1.0 / length_scale) * n; }
};

/// Builds the 602-wide feature vector from a trace and a wind vector.
std::vector<double> trace_features(const SensorTrace& trace, Vec2 wind);

/// One row per sample: f0..f601, label_dx, label_dy, source_x, source_y,
/// sensor_x, sensor_y, wind_x, wind_y, seed.
void write_dataset_csv(const std::string& path, std::span<const DatasetSample> samples);
std::vector<DatasetSample> read_dataset_csv(const std::string& path);
/// JSON sidecar with the scaler constants and master seed.
void write_dataset_sidecar(const std::string& path, const FeatureScaler& scaler, std::uint64_t master_seed,
                           const DatasetSpec& spec);

}  // namespace odorloc
