#pragma once

// End-to-end experiments: shared noisy traces per repetition, every requested
// estimator on the same data, aggregated into a comparison table.

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "odorloc/bayes.hpp"
#include "odorloc/datagen.hpp"
#include "odorloc/estimators_nn.hpp"
#include "odorloc/rl_agent.hpp"

namespace odorloc {

inline const std::vector<std::string> kMethods{"KF", "MAP", "MLP", "PINN", "RL"};

struct Scenario {
    std::string name = "default";
    SimConfig cfg;
    std::vector<Vec2> sensors{{2e-6, 2e-6}, {8e-6, 3e-6}, {4e-6, 8e-6}};
    std::size_t sample_count = 600;
    std::uint64_t seed = 0;
    std::vector<std::string> methods = kMethods;

    MapOptions map;
    FilterOptions filter;
    double filter_sigma0 = 2.5e-6;
    PinnOptions pinn;

    MlpOptions mlp;
    std::size_t mlp_samples = 4000;
    double mlp_train_frac = 0.8;
    int mlp_wind_levels = 11;
    WindRange mlp_wind;
    std::size_t mlp_sensor = 0;  // index into sensors

    DqnOptions dqn;
    int rl_grid = 10;
    Vec2 rl_truth{3e-6, 7e-6};
    Cell rl_start{0, 0};

    Vec2 truth() const { return cfg.source_pos; }
};

Scenario default_scenario();
/// Throws ConfigError on unknown methods or inconsistent settings.
void validate(const Scenario& s);

/// key=value text: simulation keys as in the config file plus
/// sensors=x1,y1;x2,y2;...  samples  seed  methods=MAP,KF,...
/// map_resolution  pinn_epochs  pinn_collocation  pinn_lambda_phy
/// mlp_epochs  mlp_samples  mlp_wind_levels  rl_episodes  rl_grid  rl_truth
Scenario scenario_from_text(const std::string& text, Scenario base = default_scenario());
Scenario read_scenario_file(const std::string& path, Scenario base = default_scenario());

struct MethodRow {
    std::string method;
    std::vector<SourceEstimate> runs;
    double median_error_m = 0.0;
    double mean_error_m = 0.0;
    double mean_inference_s = 0.0;
    double training_s = 0.0;
    std::size_t repetitions = 0;
    std::vector<std::string> failures;  // one per failed repetition

    /// Run whose error is closest to the median (first on ties).
    const SourceEstimate* representative() const;
};

struct BenchmarkReport {
    std::string scenario;
    std::vector<MethodRow> rows;  // sorted by method
    nlohmann::json environment = nlohmann::json::object();
    nlohmann::json notes = nlohmann::json::object();

    bool has_failures() const;
    const MethodRow* row(const std::string& method) const;
};

/// Median, mean and timing fields from runs; sorts rows by method.
void finalize(BenchmarkReport& report);

/// Compiler, library versions and hardware; free of timestamps so reruns
/// compare equal.
nlohmann::json environment_fingerprint();

struct BenchOptions {
    int repetitions = 5;
    int first_repetition = 0;  // repetitions first..first+repetitions-1
    /// When set, per-method artifacts of the first repetition go here.
    std::optional<std::string> artifact_dir;
    std::function<void(const std::string&)> progress;
};

/// Noise seed of repetition r.
std::uint64_t repetition_seed(const Scenario& s, int r);

/// The noisy traces every method sees in repetition r.
std::vector<SensorTrace> scenario_traces(const Scenario& s, std::span<const SensorTrace> clean, int r);

BenchmarkReport run_scenario(const Scenario& s, const BenchOptions& opt = {});

enum class ReportFormat { Csv, Json, Markdown };
ReportFormat report_format_from_string(const std::string& s);

std::string report_to_string(const BenchmarkReport& report, ReportFormat format);
void export_report(const BenchmarkReport& report, ReportFormat format, const std::string& path);

nlohmann::json report_to_json(const BenchmarkReport& report);
BenchmarkReport report_from_json(const nlohmann::json& j);
bool operator==(const SourceEstimate& a, const SourceEstimate& b);
bool operator==(const MethodRow& a, const MethodRow& b);
bool operator==(const BenchmarkReport& a, const BenchmarkReport& b);

nlohmann::json estimate_to_json(const SourceEstimate& e);
SourceEstimate estimate_from_json(const nlohmann::json& j);

struct FigureInputs {
    std::vector<double> snapshot_times{5.0, 10.0, 15.0, 27.5};
    std::optional<Posterior> posterior;
    std::vector<SourceEstimate> estimates;
};

struct FigureOutput {
    std::vector<std::string> files;
    std::vector<std::string> warnings;
};

/// Field snapshots (CSV + PGM), the posterior map with the MAP cell marked,
/// and an overlay of estimates against the truth on the field at the end of
/// the injection.
FigureOutput emit_figures(const Scenario& s, const FigureInputs& in, const std::string& out_dir);

/// Posterior image with a cross at the argmax, magnified `zoom` times. Row 0
/// of the returned pixels is the top (largest y).
std::vector<unsigned char> posterior_marker_pixels(const Posterior& post, int zoom, int& width, int& height);

}  // namespace odorloc
