// Python bindings: plain arrays and JSON strings; odorloc/__init__.py wraps them.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "odorloc/harness.hpp"

namespace py = pybind11;
using namespace odorloc;

namespace {

py::array_t<double> field_array(const ConcentrationField& f) {
    py::array_t<double> a({f.ny(), f.nx()});
    auto m = a.mutable_unchecked<2>();
    for (int j = 0; j < f.ny(); ++j)
        for (int i = 0; i < f.nx(); ++i) m(j, i) = f.at(i, j);
    return a;
}

py::array_t<double> rows_array(const std::vector<std::vector<double>>& rows) {
    const py::ssize_t n = static_cast<py::ssize_t>(rows.size());
    const py::ssize_t k = n ? static_cast<py::ssize_t>(rows.front().size()) : 0;
    py::array_t<double> a({n, k});
    auto m = a.mutable_unchecked<2>();
    for (py::ssize_t r = 0; r < n; ++r)
        for (py::ssize_t c = 0; c < k; ++c) m(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
    return a;
}

Scenario scenario(const std::string& text, std::optional<std::uint64_t> seed) {
    Scenario s = scenario_from_text(text);
    if (seed) s.seed = *seed;
    validate(s);
    return s;
}

std::string upper(std::string m) {
    for (char& c : m) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    return m;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "odor source localization: solver, estimators and benchmark harness";

    static py::exception<ConfigError> config_error(m, "ConfigError", PyExc_ValueError);
    static py::exception<NumericalError> numerical_error(m, "NumericalError", PyExc_ArithmeticError);
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const ConfigError& e) {
            py::set_error(config_error, e.what());
        } catch (const NumericalError& e) {
            py::set_error(numerical_error, e.what());
        }
    });

    m.def("resolved_config", [](const std::string& text) { return format_config(scenario(text, std::nullopt).cfg); },
          py::arg("text") = "", "Simulation settings after defaults and overrides, as key=value text.");

    m.def(
        "simulate",
        [](const std::string& text, const std::vector<double>& times) {
            const Scenario s = scenario(text, std::nullopt);
            RunOptions ro;
            ro.snapshot_times = times;
            RunResult run;
            {
                py::gil_scoped_release nogil;
                run = run_to_time(s.cfg, ro);
            }
            py::list snaps;
            for (const auto& f : run.snapshots) snaps.append(py::make_tuple(f.time(), field_array(f)));
            py::dict out;
            out["snapshots"] = snaps;
            out["final"] = field_array(run.final_field);
            out["peak"] = run.peak;
            out["clamped"] = run.clamped;
            out["mass"] = run.final_field.total_mass();
            return out;
        },
        py::arg("text") = "", py::arg("times") = std::vector<double>{},
        "Run the solver; fields are (ny, nx) arrays with row j = y index.");

    m.def(
        "observe",
        [](const std::string& text, std::optional<std::uint64_t> seed) {
            const Scenario s = scenario(text, seed);
            const auto times = uniform_times(s.cfg.total_time, s.sample_count);
            std::vector<SensorTrace> tr;
            {
                py::gil_scoped_release nogil;
                tr = observe_all(s.cfg, s.sensors, times, s.seed);
            }
            std::vector<std::vector<double>> noisy, clean, pos;
            for (const auto& t : tr) {
                noisy.push_back(t.readings);
                clean.push_back(t.clean);
                pos.push_back({t.sensor_pos.x, t.sensor_pos.y});
            }
            py::dict out;
            out["times"] = py::array_t<double>(static_cast<py::ssize_t>(times.size()), times.data());
            out["readings"] = rows_array(noisy);
            out["clean"] = rows_array(clean);
            out["sensors"] = rows_array(pos);
            out["noise_sigma"] = tr.empty() ? 0.0 : tr.front().noise_sigma;
            return out;
        },
        py::arg("text") = "", py::arg("seed") = py::none(), "Noisy and clean sensor traces of the scenario.");

    m.def(
        "bench",
        [](const std::string& text, int repetitions, const std::vector<std::string>& methods, std::optional<std::uint64_t> seed,
           int first_repetition, std::optional<std::string> artifact_dir) {
            Scenario s = scenario(text, seed);
            if (!methods.empty()) {
                s.methods.clear();
                for (const auto& mth : methods) s.methods.push_back(upper(mth));
                validate(s);
            }
            BenchOptions opt;
            opt.repetitions = repetitions;
            opt.first_repetition = first_repetition;
            opt.artifact_dir = artifact_dir;
            BenchmarkReport rep;
            {
                py::gil_scoped_release nogil;
                rep = run_scenario(s, opt);
            }
            return report_to_json(rep).dump();
        },
        py::arg("text") = "", py::arg("repetitions") = 5, py::arg("methods") = std::vector<std::string>{},
        py::arg("seed") = py::none(), py::arg("first_repetition") = 0, py::arg("artifact_dir") = py::none(),
        "Run the benchmark and return the report as a JSON string.");

    m.def(
        "format_report",
        [](const std::string& report_json, const std::string& format) {
            return report_to_string(report_from_json(nlohmann::json::parse(report_json)), report_format_from_string(format));
        },
        py::arg("report_json"), py::arg("format") = "md", "Render a JSON report as csv, json or md.");

    m.attr("METHODS") = kMethods;
}
