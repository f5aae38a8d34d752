#include "dlbdp/experiment.hpp"
#include "dlbdp/solver.hpp"

#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>

namespace py = pybind11;
using namespace dlbdp;

namespace {

py::array_t<double> to_array(const Matrix& m) {
    py::array_t<double> out({m.rows(), m.cols()});
    std::copy(m.data().begin(), m.data().end(), out.mutable_data());
    return out;
}

py::array_t<double> to_array(const std::vector<double>& v) {
    py::array_t<double> out(v.size());
    std::copy(v.begin(), v.end(), out.mutable_data());
    return out;
}

py::object parse_json(const std::string& text) { return py::module_::import("json").attr("loads")(text); }

Progress wrap(const std::optional<std::function<void(const std::string&)>>& callback) {
    if (!callback) return {};
    return [cb = *callback](const std::string& line) { cb(line); };
}

py::list comparison_rows(const Comparison& cmp) {
    py::list rows;
    for (const auto& r : cmp.rows) {
        py::dict row;
        row["N"] = r.steps;
        row["scheme"] = to_string(r.scheme);
        row["process"] = to_string(r.process);
        row["mean_rel_mse"] = r.mean_rel_mse;
        row["std_rel_mse"] = r.std_rel_mse;
        row["mean_seconds"] = r.mean_seconds;
        row["diverged_runs"] = r.diverged_runs;
        rows.append(row);
    }
    return rows;
}

}  // namespace

PYBIND11_MODULE(_dlbdp, m) {
    m.doc() = "Deep BSDE solvers with differential learning";
    m.attr("__version__") = DLBDP_VERSION;

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_RuntimeError);

    py::class_<ExperimentConfig>(m, "Config")
        .def_static(
            "load",
            [](std::optional<std::string> preset, std::optional<std::string> toml, std::vector<std::string> overrides) {
                return load_config(preset, toml, overrides);
            },
            py::arg("preset") = py::none(), py::arg("toml") = py::none(),
            py::arg("overrides") = std::vector<std::string>{},
            "Preset, then TOML text, then key=value overrides.")
        .def("to_toml", [](const ExperimentConfig& c) { return emit_toml(to_table(c)); })
        .def("with_overrides",
             [](const ExperimentConfig& c, const std::vector<std::string>& overrides) {
                 ConfigTable t;
                 for (const auto& o : overrides) t.insert(parse_override(o));
                 ExperimentConfig out = apply_table(c, t);
                 out.validate();
                 return out;
             })
        .def_property_readonly("problem", [](const ExperimentConfig& c) { return to_string(c.problem); })
        .def_property_readonly("dim", &ExperimentConfig::dim)
        .def_property_readonly("steps", [](const ExperimentConfig& c) { return c.steps; })
        .def_property_readonly("n_list", [](const ExperimentConfig& c) { return c.n_list; })
        .def_property_readonly("seeds", [](const ExperimentConfig& c) { return c.seeds; })
        .def_property_readonly("scheme", [](const ExperimentConfig& c) { return to_string(c.scheme.scheme); })
        .def("__repr__", [](const ExperimentConfig& c) {
            return "<Config " + to_string(c.problem) + " d=" + std::to_string(c.dim()) + " N=" +
                   std::to_string(c.steps) + " " + to_string(c.scheme.scheme) + ">";
        });

    m.def(
        "run",
        [](const ExperimentConfig& c, std::optional<std::function<void(const std::string&)>> progress) {
            return parse_json(report_json(run_experiment(c, wrap(progress))));
        },
        py::arg("config"), py::arg("progress") = py::none(), "Q seeded solves at config.steps; the report as a dict.");

    m.def(
        "compare",
        [](const ExperimentConfig& c, std::optional<std::function<void(const std::string&)>> progress) {
            return comparison_rows(compare(c, wrap(progress)));
        },
        py::arg("config"), py::arg("progress") = py::none(), "Both schemes over n_list with shared seeds.");

    m.def(
        "sweep_n",
        [](const ExperimentConfig& c, std::optional<std::vector<std::size_t>> n_list,
           std::optional<std::function<void(const std::string&)>> progress) {
            const auto sweep = sweep_n(c, n_list.value_or(c.n_list), wrap(progress));
            py::list rows;
            for (const auto& r : sweep.rows) {
                py::dict row;
                row["N"] = r.steps;
                row["process"] = to_string(r.process);
                row["mean_rel_mse"] = r.mean_rel_mse;
                row["std_rel_mse"] = r.std_rel_mse;
                row["mean_seconds"] = r.mean_seconds;
                rows.append(row);
            }
            return rows;
        },
        py::arg("config"), py::arg("n_list") = py::none(), py::arg("progress") = py::none());

    m.def(
        "oracle",
        [](const ExperimentConfig& c) {
            const auto p = c.make_problem();
            return parse_json(oracle_json(c, *p, resolve_oracle(c, *p)));
        },
        py::arg("config"), "Reference (Y0, Z0, Gamma0) at t = 0 when one is available.");

    m.def(
        "simulate_paths",
        [](const ExperimentConfig& c, std::size_t batch, std::uint64_t seed) {
            const auto p = c.make_problem();
            const TimeGrid grid(p->terminal_time(), c.steps);
            const auto paths = simulate_paths(*p, grid, batch, RngStream(seed, 0));
            const std::size_t d = p->dim();
            py::array_t<double> out({c.steps + 1, batch, d});
            double* dst = out.mutable_data();
            for (const auto& s : paths.states) dst = std::copy(s.data().begin(), s.data().end(), dst);
            return out;
        },
        py::arg("config"), py::arg("batch"), py::arg("seed") = 1,
        "Euler paths of the forward process, shape (N + 1, batch, d).");

    m.def(
        "bs_closed_form",
        [](double t, std::vector<double> x_ln, double maturity, double strike, double rate, std::vector<double> vol,
           std::optional<std::vector<double>> weights, std::optional<std::vector<double>> dividend) {
            const std::size_t d = x_ln.size();
            if (vol.size() == 1 && d > 1) vol.assign(d, vol[0]);
            const BasketCallInputs in{maturity,
                                      strike,
                                      rate,
                                      weights.value_or(std::vector<double>(d, 1.0 / d)),
                                      dividend.value_or(std::vector<double>(d, 0.0)),
                                      vol,
                                      vol};
            const auto s = bs_closed_form(t, x_ln, in);
            return py::make_tuple(s.y, to_array(s.z), to_array(s.gamma));
        },
        py::arg("t"), py::arg("x_ln"), py::arg("maturity") = 1.0, py::arg("strike") = 100.0, py::arg("rate") = 0.03,
        py::arg("vol") = std::vector<double>{0.2}, py::arg("weights") = py::none(), py::arg("dividend") = py::none(),
        "Geometric-basket call (Y, Z, Gamma) in ln coordinates.");

    m.def(
        "hjb_reference",
        [](std::size_t d, std::size_t samples, std::uint64_t seed, double maturity, double vol, double x0) {
            const HjbParams p{.d = d, .maturity = maturity, .x0 = std::vector<double>(d, x0), .vol = vol};
            const auto r = hjb_reference(p, samples, RngStream(seed, stream_label({0x4a4b})));
            py::dict out;
            out["y"] = r.y;
            out["z"] = to_array(r.z);
            out["gamma"] = to_array(r.gamma);
            out["y_stderr"] = r.y_stderr;
            out["samples"] = r.samples;
            return out;
        },
        py::arg("d"), py::arg("samples") = 1'000'000, py::arg("seed") = 2024, py::arg("maturity") = 0.5,
        py::arg("vol") = std::sqrt(0.2), py::arg("x0") = 1.0, "Monte-Carlo HJB reference at t = 0.");

    m.def(
        "effective_volatility",
        [](double t, double b0, double b1, double b2, double period1, double period2, double maturity) {
            LocalVolParams p;
            p.b0 = b0;
            p.b1 = b1;
            p.b2 = b2;
            p.period1 = period1;
            p.period2 = period2;
            p.maturity = maturity;
            return effective_volatility(t, p);
        },
        py::arg("t"), py::arg("b0") = 0.25, py::arg("b1") = 0.125, py::arg("b2") = 0.025, py::arg("period1") = 1.0,
        py::arg("period2") = 0.25, py::arg("maturity") = 0.25);
}
