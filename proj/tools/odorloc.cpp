// odorloc command line: simulate, gen-data, localize, bench, figures.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "odorloc/harness.hpp"

using namespace odorloc;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kConfig = 2;
constexpr int kNumerical = 3;
constexpr int kPartial = 4;

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
    std::string format = "md";
};

Scenario load_scenario(const Globals& g) {
    Scenario s = g.config.empty() ? default_scenario() : read_scenario_file(g.config);
    if (g.seed) s.seed = *g.seed;
    validate(s);
    return s;
}

std::string out_path(const Globals& g, const std::string& name) {
    fs::create_directories(g.out);
    return (fs::path(g.out) / name).string();
}

std::string extension(ReportFormat f) {
    switch (f) {
        case ReportFormat::Csv: return "csv";
        case ReportFormat::Json: return "json";
        case ReportFormat::Markdown: return "md";
    }
    return "txt";
}

void log(const std::string& m) { std::cerr << "[odorloc] " << m << "\n"; }

int failure_code(const std::vector<std::string>& failures) {
    for (const auto& f : failures) {
        if (f.find("numerical failure") != std::string::npos) return kNumerical;
    }
    return kConfig;
}

int cmd_simulate(const Globals& g, const std::vector<double>& times) {
    const Scenario s = load_scenario(g);
    RunOptions ro;
    for (double t : times) {
        if (t < 0.0 || t > s.cfg.total_time) throw ConfigError("snapshot time outside [0, total_time]");
        ro.snapshot_times.push_back(t);
    }
    const RunResult run = run_to_time(s.cfg, ro);
    for (const auto& f : run.snapshots) {
        char tag[32];
        std::snprintf(tag, sizeof tag, "%g", f.time());
        const std::string base = std::string("field_t") + tag;
        write_field_csv(out_path(g, base + ".csv"), f);
        write_pgm(out_path(g, base + ".pgm"), f.values(), f.nx(), f.ny());
        std::cout << out_path(g, base + ".csv") << "\n";
    }
    write_field_csv(out_path(g, "field_final.csv"), run.final_field);
    std::cout << "peak " << run.peak << ", final mass " << run.final_field.total_mass() << "\n";
    if (run.clamped > 0) std::cout << "warning: " << run.clamped << " negative values clamped\n";
    return kOk;
}

int cmd_gen_data(const Globals& g, std::size_t count, int levels, const std::vector<double>& sensor) {
    const Scenario s = load_scenario(g);
    DatasetSpec spec;
    spec.base = s.cfg;
    spec.sensor_pos = sensor.size() == 2 ? Vec2{sensor[0], sensor[1]} : s.sensors[s.mlp_sensor];
    spec.count = count;
    spec.wind = s.mlp_wind;
    spec.seed = s.seed;
    spec.wind_levels = levels;
    spec.sample_times = uniform_times(s.cfg.total_time, s.sample_count);
    const Stopwatch sw;
    const auto data = build_dataset(spec);
    write_dataset_csv(out_path(g, "dataset.csv"), data);
    write_dataset_sidecar(out_path(g, "dataset.json"), FeatureScaler::fit(data), spec.seed, spec);
    std::cout << data.size() << " samples in " << sw.seconds() << " s -> " << out_path(g, "dataset.csv") << "\n";
    return kOk;
}

int cmd_localize(const Globals& g, std::string method, int repetition, int epochs) {
    std::transform(method.begin(), method.end(), method.begin(), [](unsigned char c) { return std::toupper(c); });
    Scenario s = load_scenario(g);
    s.methods = {method};
    validate(s);
    if (epochs > 0) {
        s.pinn.epochs = epochs;
        s.mlp.epochs = epochs;
        s.dqn.episodes = epochs;
    }
    BenchOptions opt;
    opt.repetitions = 1;
    opt.first_repetition = repetition;
    opt.artifact_dir = (fs::path(g.out) / "artifacts").string();
    opt.progress = log;
    const BenchmarkReport rep = run_scenario(s, opt);
    const MethodRow& row = rep.rows.front();
    const auto& runs = row.runs;
    const std::string path = out_path(g, "estimate_" + method + ".json");
    nlohmann::json j;
    j["repetition"] = repetition;
    j["environment"] = rep.environment;
    if (!row.failures.empty()) j["failures"] = row.failures;
    if (!runs.empty()) j["estimate"] = estimate_to_json(runs.front());
    std::ofstream(path) << j.dump(2) << "\n";
    std::cout << j.dump(2) << "\n";
    if (!j.contains("estimate")) return failure_code(row.failures);
    return kOk;
}

int cmd_bench(const Globals& g, int repetitions, const std::vector<std::string>& methods) {
    Scenario s = load_scenario(g);
    if (!methods.empty()) {
        s.methods.clear();
        for (auto m : methods) {
            std::transform(m.begin(), m.end(), m.begin(), [](unsigned char c) { return std::toupper(c); });
            s.methods.push_back(m);
        }
        validate(s);
    }
    const ReportFormat f = report_format_from_string(g.format);
    BenchOptions opt;
    opt.repetitions = repetitions;
    opt.artifact_dir = (fs::path(g.out) / "artifacts").string();
    opt.progress = log;
    const BenchmarkReport rep = run_scenario(s, opt);
    const std::string path = out_path(g, "report." + extension(f));
    export_report(rep, f, path);
    if (f != ReportFormat::Json) export_report(rep, ReportFormat::Json, out_path(g, "report.json"));
    std::cout << report_to_string(rep, ReportFormat::Markdown);
    std::cout << "report: " << path << "\n";
    if (rep.has_failures()) {
        for (const auto& r : rep.rows) {
            for (const auto& e : r.failures) std::cerr << r.method << " " << e << "\n";
        }
        return kPartial;
    }
    return kOk;
}

int cmd_figures(const Globals& g, const std::string& report_path, bool posterior, const std::vector<double>& times) {
    const Scenario s = load_scenario(g);
    FigureInputs in;
    if (!times.empty()) in.snapshot_times = times;
    if (!report_path.empty()) {
        std::ifstream f(report_path);
        if (!f) throw ConfigError("cannot read report '" + report_path + "'");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(f);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("report is not JSON: ") + e.what());
        }
        const BenchmarkReport rep = report_from_json(j);
        for (const auto& r : rep.rows) {
            // the grid-search scenario only; RL runs on its own truth
            if (const SourceEstimate* e = r.representative(); e && e->truth == s.truth()) in.estimates.push_back(*e);
        }
    }
    if (posterior) {
        log("building response bank for the posterior map");
        const auto times_s = uniform_times(s.cfg.total_time, s.sample_count);
        const auto bank = ResponseBank::build(s.cfg, s.sensors, times_s);
        const auto clean = observe_all(s.cfg, s.sensors, times_s, s.seed);
        const MapResult m = map_estimate(scenario_traces(s, clean, 0), bank, s.truth(), s.map);
        in.posterior = m.posterior;
        if (in.estimates.empty()) in.estimates.push_back(m.estimate);
    }
    const FigureOutput out = emit_figures(s, in, g.out);
    for (const auto& w : out.warnings) std::cerr << "warning: " << w << "\n";
    for (const auto& f : out.files) std::cout << f << "\n";
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Odor source localization toolkit"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags also accepted after the subcommand
    Globals g;
    std::uint64_t seed = 0;
    app.add_option("--config", g.config, "key=value scenario file")->check(CLI::ExistingFile);
    auto* seed_opt = app.add_option("--seed", seed, "master seed");
    app.add_option("--out", g.out, "output directory");
    app.add_option("--format", g.format, "report format")->check(CLI::IsMember({"csv", "json", "md"}));

    auto* sim = app.add_subcommand("simulate", "run the solver and write field snapshots");
    std::vector<double> sim_times{5.0, 10.0, 15.0, 27.5};
    sim->add_option("--times", sim_times, "snapshot times (s)")->delimiter(',');

    auto* gen = app.add_subcommand("gen-data", "generate the MLP training set");
    std::size_t count = 4000;
    int levels = 11;
    std::vector<double> sensor;
    gen->add_option("--count", count, "samples");
    gen->add_option("--wind-levels", levels, "levels per wind component, 0 for continuous wind");
    gen->add_option("--sensor", sensor, "sensor position x,y (m)")->delimiter(',')->expected(2);

    auto* loc = app.add_subcommand("localize", "single estimate as JSON");
    std::string method;
    int repetition = 0, epochs = 0;
    loc->add_option("method", method, "map|kf|mlp|pinn|rl")
        ->required()
        ->check(CLI::IsMember({"map", "kf", "mlp", "pinn", "rl"}, CLI::ignore_case));
    loc->add_option("--repetition", repetition, "noise repetition index")->check(CLI::NonNegativeNumber);
    loc->add_option("--epochs", epochs, "training epochs or episodes override");

    auto* bench = app.add_subcommand("bench", "run every method and write the comparison report");
    int reps = 5;
    std::vector<std::string> methods;
    bench->add_option("--repetitions", reps, "noise repetitions")->check(CLI::PositiveNumber);
    bench->add_option("--methods", methods, "subset of MAP,KF,MLP,PINN,RL")->delimiter(',');

    auto* fig = app.add_subcommand("figures", "field snapshots, posterior map and estimate overlay");
    std::string report_path;
    bool no_posterior = false;
    std::vector<double> fig_times;
    fig->add_option("--report", report_path, "report.json from bench");
    fig->add_flag("--no-posterior", no_posterior, "skip the posterior map");
    fig->add_option("--times", fig_times, "snapshot times (s)")->delimiter(',');

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfig;
    }
    if (seed_opt->count() > 0) g.seed = seed;

    try {
        if (*sim) return cmd_simulate(g, sim_times);
        if (*gen) return cmd_gen_data(g, count, levels, sensor);
        if (*loc) return cmd_localize(g, method, repetition, epochs);
        if (*bench) return cmd_bench(g, reps, methods);
        if (*fig) return cmd_figures(g, report_path, !no_posterior, fig_times);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfig;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kConfig;
    }
    return kOk;
}
