#include "dlbdp/experiment.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <sstream>

#ifndef DLBDP_VERSION
#define DLBDP_VERSION "unknown"
#endif

namespace dlbdp {

std::string to_string(OracleKind k) {
    switch (k) {
        case OracleKind::exact: return "exact";
        case OracleKind::t0_reference: return "t0_reference";
        case OracleKind::y0_constant: return "y0_constant";
        case OracleKind::none: return "none";
    }
    return "?";
}

namespace {

HjbParams hjb_params(const ExperimentConfig& config) {
    const std::size_t d = config.dim();
    return {.d = d, .maturity = config.hjb.maturity, .x0 = std::vector<double>(d, config.hjb.x0), .vol = config.hjb.vol};
}

}  // namespace

Oracle resolve_oracle(const ExperimentConfig& config, const BsdeProblem& problem) {
    Oracle o;
    if (problem.has_exact_solution()) {
        o.kind = OracleKind::exact;
        o.t0 = problem.exact(0.0, problem.x0());
    } else if (config.problem == ProblemKind::hjb) {
        const auto ref = hjb_reference(hjb_params(config), config.hjb.reference_samples,
                                       RngStream(config.hjb.reference_seed, stream_label({0x4a4b})));
        o.kind = OracleKind::t0_reference;
        o.t0 = SolutionTriple{ref.y, ref.z, ref.gamma};
        o.y_stderr = ref.y_stderr;
        o.samples = ref.samples;
    } else if (config.reference_y0) {
        o.kind = OracleKind::y0_constant;
        o.t0 = SolutionTriple{*config.reference_y0, {}, Matrix()};
    }
    return o;
}

std::size_t RunReport::diverged_runs() const {
    std::size_t n = 0;
    for (const auto& r : runs) n += r.diverged ? 1 : 0;
    return n;
}

std::optional<RunAggregate> aggregate_runs(const std::vector<RunRecord>& runs) {
    std::vector<RunMetrics> finished;
    for (const auto& r : runs)
        if (!r.diverged && !r.metrics.series.empty()) finished.push_back(r.metrics);
    if (finished.empty()) return std::nullopt;
    return aggregate(finished);
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& v) {
    if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

}  // namespace

RunReport run_experiment(const ExperimentConfig& config, std::size_t steps, const Oracle& oracle,
                         const Progress& progress) {
    config.validate();
    const ProblemPtr problem = config.make_problem();
    const TimeGrid grid(problem->terminal_time(), steps);

    RunReport report;
    report.config = config;
    report.steps = steps;
    report.oracle = oracle;
    if (oracle.kind == OracleKind::exact) {
        for (std::size_t n = 0; n <= steps; ++n) report.times.push_back(grid.t(n));
    } else if (oracle.kind != OracleKind::none) {
        report.times.push_back(0.0);
    }

    std::vector<double> y0s, seconds;
    for (std::size_t q = 0; q < config.runs; ++q) {
        const SchemeConfig scheme = config.scheme_for(steps, q);
        RunRecord rec;
        rec.seed = scheme.seed;
        if (progress) {
            progress(to_string(config.problem) + " " + to_string(scheme.scheme) + " N=" + std::to_string(steps) +
                     " run " + std::to_string(q + 1) + "/" + std::to_string(config.runs) + " (seed " +
                     std::to_string(rec.seed) + ")");
        }
        try {
            const SolveResult result = solve_backward(scheme, *problem);
            rec.digest = result.digest();
            for (const auto& t : result.training) rec.final_loss.push_back(t.final_loss);
            const TripleBatch& t0 = result.estimates.front();
            rec.y0 = t0.y(0, 0);
            rec.z0.assign(t0.z.row_span(0).begin(), t0.z.row_span(0).end());
            rec.gamma0.assign(t0.gamma.row_span(0).begin(), t0.gamma.row_span(0).end());
            switch (oracle.kind) {
                case OracleKind::exact: rec.metrics = score_run(*problem, grid, result); break;
                case OracleKind::t0_reference: rec.metrics = score_t0(result, *oracle.t0, true); break;
                case OracleKind::y0_constant: rec.metrics = score_t0(result, *oracle.t0, false); break;
                case OracleKind::none: rec.metrics.seconds = result.seconds; break;
            }
            rec.metrics.seconds = result.seconds;
            y0s.push_back(rec.y0);
            seconds.push_back(result.seconds);
            if (q == 0 && config.emit_paths) report.paths = result.test_paths;
        } catch (const DivergenceError& e) {
            rec.diverged = true;
            rec.failure = e.what();
        } catch (const NumericalBlowup& e) {
            rec.diverged = true;
            rec.failure = e.what();
        }
        if (progress && rec.diverged) progress("  diverged: " + rec.failure);
        report.runs.push_back(std::move(rec));
    }
    report.aggregate = aggregate_runs(report.runs);
    std::tie(report.y0_mean, report.y0_std) = mean_std(y0s);
    report.mean_seconds = mean_std(seconds).first;
    return report;
}

RunReport run_experiment(const ExperimentConfig& config, const Progress& progress) {
    config.validate();
    const ProblemPtr problem = config.make_problem();
    return run_experiment(config, config.steps, resolve_oracle(config, *problem), progress);
}

// --- Comparisons and sweeps ------------------------------------------------------------

void check_comparable(const ExperimentConfig& baseline, const ExperimentConfig& differential) {
    if (baseline.scheme.scheme != Scheme::dbdp || differential.scheme.scheme != Scheme::dlbdp)
        throw ConfigError("compare: expects a DBDP config and a DLBDP config");
    auto strip = [](ConfigTable t) {
        for (const char* k : {"scheme.name", "scheme.omega1", "scheme.omega2"}) t.erase(k);
        return t;
    };
    const ConfigTable a = strip(to_table(baseline)), b = strip(to_table(differential));
    for (const auto& [key, value] : a) {
        const auto it = b.find(key);
        if (it == b.end() || !(it->second == value)) throw ConfigError("compare: configs differ in '" + key + "'");
    }
    for (const auto& [key, value] : b)
        if (!a.count(key)) throw ConfigError("compare: configs differ in '" + key + "'");
}

namespace {

double t0_value(const std::optional<RunAggregate>& agg, Process p, bool mean) {
    if (!agg) return std::numeric_limits<double>::quiet_NaN();
    for (const auto& s : agg->series)
        if (s.process == p) return mean ? s.mean_relative_mse.front() : s.std_relative_mse.front();
    return std::numeric_limits<double>::quiet_NaN();
}

// Rows are emitted even when every run diverged, so the table keeps its shape.
std::vector<Process> scored_processes(const RunReport& r) {
    switch (r.oracle.kind) {
        case OracleKind::exact:
        case OracleKind::t0_reference: return {Process::y, Process::z, Process::gamma};
        case OracleKind::y0_constant: return {Process::y};
        case OracleKind::none: break;
    }
    return {};
}

}  // namespace

Comparison compare(const ExperimentConfig& baseline, const ExperimentConfig& differential, const Progress& progress) {
    check_comparable(baseline, differential);
    baseline.validate();
    differential.validate();
    const ProblemPtr problem = baseline.make_problem();
    const Oracle oracle = resolve_oracle(baseline, *problem);
    Comparison out;
    for (std::size_t n : baseline.n_list) {
        for (const ExperimentConfig* cfg : {&baseline, &differential}) {
            RunReport r = run_experiment(*cfg, n, oracle, progress);
            for (Process p : scored_processes(r)) {
                out.rows.push_back({n, cfg->scheme.scheme, p, t0_value(r.aggregate, p, true),
                                    t0_value(r.aggregate, p, false), r.mean_seconds, r.diverged_runs()});
            }
            out.reports.push_back(std::move(r));
        }
    }
    return out;
}

Comparison compare(const ExperimentConfig& config, const Progress& progress) {
    ExperimentConfig base = config, diff = config;
    base.scheme.scheme = Scheme::dbdp;
    base.scheme.omega1.reset();
    base.scheme.omega2.reset();
    diff.scheme.scheme = Scheme::dlbdp;
    return compare(base, diff, progress);
}

Sweep sweep_n(const ExperimentConfig& config, const std::vector<std::size_t>& n_list, const Progress& progress) {
    if (n_list.empty()) throw ConfigError("sweep-n: the N list is empty");
    for (std::size_t i = 1; i < n_list.size(); ++i)
        if (n_list[i] <= n_list[i - 1]) throw ConfigError("sweep-n: the N list must be strictly ascending");
    config.validate();
    const ProblemPtr problem = config.make_problem();
    const Oracle oracle = resolve_oracle(config, *problem);
    Sweep out;
    for (std::size_t n : n_list) {
        RunReport r = run_experiment(config, n, oracle, progress);
        for (Process p : scored_processes(r))
            out.rows.push_back({n, p, t0_value(r.aggregate, p, true), t0_value(r.aggregate, p, false), r.mean_seconds});
        out.reports.push_back(std::move(r));
    }
    return out;
}

// --- Writers --------------------------------------------------------------------------

namespace {

std::string fmt(double v) { return format_double(v); }

}  // namespace

void write_metrics_csv(std::ostream& out, const RunReport& report) {
    out << "n,t_n,process,mean_mse,std_mse,mean_rel_mse,std_rel_mse\n";
    if (!report.aggregate) return;
    for (const auto& s : report.aggregate->series) {
        for (std::size_t n = 0; n < s.mean_mse.size(); ++n) {
            out << n << ',' << fmt(report.times[n]) << ',' << to_string(s.process) << ',' << fmt(s.mean_mse[n])
                << ',' << fmt(s.std_mse[n]) << ',' << fmt(s.mean_relative_mse[n]) << ','
                << fmt(s.std_relative_mse[n]) << '\n';
        }
    }
}

void write_series_csv(std::ostream& out, const RunReport& report) {
    out << "n,t_n,process,mean_mse,mse_lower,mse_upper,mean_rel_mse,rel_lower,rel_upper\n";
    if (!report.aggregate) return;
    for (const auto& s : report.aggregate->series) {
        // The terminal step is the payoff itself and is left out of the plot.
        const std::size_t last = s.mean_mse.size() > 1 ? s.mean_mse.size() - 1 : s.mean_mse.size();
        for (std::size_t n = 0; n < last; ++n) {
            out << n << ',' << fmt(report.times[n]) << ',' << to_string(s.process) << ',' << fmt(s.mean_mse[n])
                << ',' << fmt(s.mean_mse[n] - s.std_mse[n]) << ',' << fmt(s.mean_mse[n] + s.std_mse[n]) << ','
                << fmt(s.mean_relative_mse[n]) << ',' << fmt(s.mean_relative_mse[n] - s.std_relative_mse[n]) << ','
                << fmt(s.mean_relative_mse[n] + s.std_relative_mse[n]) << '\n';
        }
    }
}

void write_runs_csv(std::ostream& out, const RunReport& report) {
    out << "run,seed,diverged,seconds,y0,digest\n";
    for (std::size_t q = 0; q < report.runs.size(); ++q) {
        const auto& r = report.runs[q];
        out << q + 1 << ',' << r.seed << ',' << (r.diverged ? 1 : 0) << ',';
        if (r.diverged) {
            out << ",,\n";
            continue;
        }
        std::ostringstream hex;
        hex << std::hex << r.digest;
        out << fmt(r.metrics.seconds) << ',' << fmt(r.y0) << ',' << hex.str() << '\n';
    }
    out << "mean,,," << fmt(report.mean_seconds) << ',' << fmt(report.y0_mean) << ",\n";
    out << "std,,,," << fmt(report.y0_std) << ",\n";
}

void write_summary(std::ostream& out, const RunReport& report) {
    const auto& c = report.config;
    out << "problem " << to_string(c.problem) << ", d = " << c.dim() << ", N = " << report.steps << ", scheme "
        << to_string(c.scheme.scheme) << ", Q = " << c.runs << ", preset " << c.preset << '\n';
    out << "oracle: " << to_string(report.oracle.kind) << '\n';
    out << "finished runs: " << report.runs.size() - report.diverged_runs() << " of " << report.runs.size() << '\n';
    out << "mean runtime [s]: " << fmt(report.mean_seconds) << '\n';
    out << "Y0 estimate: " << fmt(report.y0_mean) << " (" << fmt(report.y0_std) << ")\n";
    if (!report.aggregate) {
        out << "no metrics (no reference solution or every run diverged)\n";
        return;
    }
    out << "relative MSE at t0, mean (std):\n";
    for (const auto& s : report.aggregate->series)
        out << "  " << to_string(s.process) << ": " << fmt(s.mean_relative_mse.front()) << " ("
            << fmt(s.std_relative_mse.front()) << ")\n";
}

namespace {

using nlohmann::json;

json number(double v) { return std::isfinite(v) ? json(v) : json(format_double(v)); }

json numbers(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(number(x));
    return a;
}

json series_json(const ProcessErrorSeries& s) {
    return {{"process", to_string(s.process)},
            {"mse", numbers(s.mse)},
            {"relative_mse", numbers(s.relative_mse)},
            {"excluded", s.excluded},
            {"batch_size", s.batch_size}};
}

json triple_json(const SolutionTriple& t) {
    json g = json::array();
    for (std::size_t r = 0; r < t.gamma.rows(); ++r) {
        const auto row = t.gamma.row_span(r);
        g.push_back(numbers({row.begin(), row.end()}));
    }
    return {{"y", number(t.y)}, {"z", numbers(t.z)}, {"gamma", g}};
}

}  // namespace

std::string report_json(const RunReport& report) {
    json j;
    j["config"] = emit_toml(to_table(report.config));
    j["steps"] = report.steps;
    j["times"] = numbers(report.times);
    j["environment"] = {{"version", DLBDP_VERSION},
                        {"float_bits", std::numeric_limits<double>::digits == 53 ? 64 : 0},
                        {"compiler", __VERSION__},
                        {"std_deviation", "population"}};
    json oracle = {{"kind", to_string(report.oracle.kind)}};
    if (report.oracle.t0) oracle["t0"] = triple_json(*report.oracle.t0);
    if (report.oracle.samples > 0) {
        oracle["y_stderr"] = report.oracle.y_stderr;
        oracle["samples"] = report.oracle.samples;
    }
    j["oracle"] = oracle;
    json runs = json::array();
    for (const auto& r : report.runs) {
        json run = {{"seed", r.seed}, {"diverged", r.diverged}};
        if (r.diverged) {
            run["failure"] = r.failure;
        } else {
            std::ostringstream hex;
            hex << std::hex << r.digest;
            run["digest"] = hex.str();
            run["seconds"] = r.metrics.seconds;
            run["final_loss"] = numbers(r.final_loss);
            run["y0"] = number(r.y0);
            run["z0"] = numbers(r.z0);
            run["gamma0"] = numbers(r.gamma0);
            json series = json::array();
            for (const auto& s : r.metrics.series) series.push_back(series_json(s));
            run["series"] = series;
        }
        runs.push_back(run);
    }
    j["runs"] = runs;
    if (report.aggregate) {
        json agg = {{"runs", report.aggregate->runs},
                    {"mean_seconds", report.aggregate->mean_seconds},
                    {"std_seconds", report.aggregate->std_seconds}};
        json series = json::array();
        for (const auto& s : report.aggregate->series) {
            series.push_back({{"process", to_string(s.process)},
                              {"mean_mse", numbers(s.mean_mse)},
                              {"std_mse", numbers(s.std_mse)},
                              {"mean_rel_mse", numbers(s.mean_relative_mse)},
                              {"std_rel_mse", numbers(s.std_relative_mse)}});
        }
        agg["series"] = series;
        j["aggregate"] = agg;
    }
    j["y0_mean"] = number(report.y0_mean);
    j["y0_std"] = number(report.y0_std);
    j["diverged_runs"] = report.diverged_runs();
    return j.dump(2) + "\n";
}

void write_compare_csv(std::ostream& out, const Comparison& comparison) {
    out << "N,scheme,process,mean_rel_mse,std_rel_mse,mean_seconds,diverged_runs\n";
    for (const auto& r : comparison.rows) {
        out << r.steps << ',' << to_string(r.scheme) << ',' << to_string(r.process) << ',' << fmt(r.mean_rel_mse)
            << ',' << fmt(r.std_rel_mse) << ',' << fmt(r.mean_seconds) << ',' << r.diverged_runs << '\n';
    }
}

void write_compare_summary(std::ostream& out, const Comparison& comparison) {
    out << "relative MSE at t0, mean (std), and mean runtime [s]\n";
    std::size_t current = 0;
    std::string current_scheme;
    for (const auto& r : comparison.rows) {
        if (r.steps != current || to_string(r.scheme) != current_scheme) {
            current = r.steps;
            current_scheme = to_string(r.scheme);
            out << "N = " << r.steps << ", " << current_scheme << ", runtime " << fmt(r.mean_seconds);
            if (r.diverged_runs > 0) out << ", diverged runs " << r.diverged_runs;
            out << '\n';
        }
        out << "  " << to_string(r.process) << ": " << fmt(r.mean_rel_mse) << " (" << fmt(r.std_rel_mse) << ")\n";
    }
}

void write_sweep_csv(std::ostream& out, const Sweep& sweep) {
    out << "N,process,mean_rel_mse,std_rel_mse,mean_seconds\n";
    for (const auto& r : sweep.rows) {
        out << r.steps << ',' << to_string(r.process) << ',' << fmt(r.mean_rel_mse) << ',' << fmt(r.std_rel_mse)
            << ',' << fmt(r.mean_seconds) << '\n';
    }
}

void write_sweep_summary(std::ostream& out, const Sweep& sweep) {
    out << "relative MSE at t0 against N, mean (std)\n";
    for (const auto& r : sweep.rows)
        out << "N = " << r.steps << "  " << to_string(r.process) << ": " << fmt(r.mean_rel_mse) << " ("
            << fmt(r.std_rel_mse) << "), runtime " << fmt(r.mean_seconds) << '\n';
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path.string());
    return f;
}

}  // namespace

void write_run_outputs(const std::filesystem::path& dir, const RunReport& report) {
    std::filesystem::create_directories(dir);
    open_out(dir / "report.json") << report_json(report);
    auto metrics = open_out(dir / "metrics.csv");
    write_metrics_csv(metrics, report);
    auto series = open_out(dir / "series.csv");
    write_series_csv(series, report);
    auto runs = open_out(dir / "runs.csv");
    write_runs_csv(runs, report);
    auto summary = open_out(dir / "summary.txt");
    write_summary(summary, report);
    open_out(dir / "config.toml") << emit_toml(to_table(report.config));
    if (report.paths) {
        const ProblemPtr problem = report.config.make_problem();
        auto paths = open_out(dir / "paths.csv");
        write_paths_csv(paths, *report.paths, TimeGrid(problem->terminal_time(), report.steps));
    }
}

void write_compare_outputs(const std::filesystem::path& dir, const Comparison& comparison) {
    std::filesystem::create_directories(dir);
    auto csv = open_out(dir / "compare.csv");
    write_compare_csv(csv, comparison);
    auto summary = open_out(dir / "summary.txt");
    write_compare_summary(summary, comparison);
    for (const auto& r : comparison.reports)
        write_run_outputs(dir / ("N" + std::to_string(r.steps) + "_" + to_string(r.config.scheme.scheme)), r);
}

void write_sweep_outputs(const std::filesystem::path& dir, const Sweep& sweep) {
    std::filesystem::create_directories(dir);
    auto csv = open_out(dir / "sweep.csv");
    write_sweep_csv(csv, sweep);
    auto summary = open_out(dir / "summary.txt");
    write_sweep_summary(summary, sweep);
    for (const auto& r : sweep.reports) write_run_outputs(dir / ("N" + std::to_string(r.steps)), r);
}

std::string oracle_json(const ExperimentConfig& config, const BsdeProblem& problem, const Oracle& oracle) {
    json j = {{"problem", to_string(config.problem)}, {"d", config.dim()}, {"kind", to_string(oracle.kind)}};
    if (oracle.t0) {
        j["t0"] = triple_json(*oracle.t0);
        if (problem.ln_domain() && oracle.t0->gamma.rows() > 0) {
            std::vector<double> x(problem.x0().begin(), problem.x0().end());
            for (double& v : x) v = std::exp(v);
            SolutionTriple price = *oracle.t0;
            price.gamma = gamma_to_original_domain(oracle.t0->gamma, x);
            j["gamma_price_coordinates"] = triple_json(price)["gamma"];
        }
    }
    if (oracle.samples > 0) {
        j["y_stderr"] = oracle.y_stderr;
        j["samples"] = oracle.samples;
    }
    return j.dump(2) + "\n";
}

}  // namespace dlbdp
