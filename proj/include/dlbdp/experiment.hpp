#pragma once

#include "dlbdp/config.hpp"
#include "dlbdp/metrics.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dlbdp {

enum class OracleKind {
    exact,         // closed form along every test path
    t0_reference,  // Monte-Carlo (Y0, Z0, Gamma0) at the start point
    y0_constant,   // a supplied value of Y0
    none,
};

std::string to_string(OracleKind k);

struct Oracle {
    OracleKind kind = OracleKind::none;
    std::optional<SolutionTriple> t0;  // Z and Gamma empty for y0_constant
    double y_stderr = 0.0;
    std::size_t samples = 0;
};

/// Closed form when the problem has one, else the HJB Monte-Carlo estimate, else the
/// configured reference_y0, else nothing.
Oracle resolve_oracle(const ExperimentConfig& config, const BsdeProblem& problem);

struct RunRecord {
    std::uint64_t seed = 0;
    bool diverged = false;
    std::string failure;
    RunMetrics metrics;
    std::vector<double> final_loss;  // per n = 0 .. N-1
    std::uint64_t digest = 0;
    double y0 = 0.0;
    std::vector<double> z0;
    std::vector<double> gamma0;  // row-major d x d, as learned (ln coordinates where applicable)
};

using Progress = std::function<void(const std::string&)>;

struct RunReport {
    ExperimentConfig config;
    std::size_t steps = 0;
    std::vector<double> times;  // t_n of the scored steps
    Oracle oracle;
    std::vector<RunRecord> runs;
    /// Over the runs that finished; absent when every run diverged or no oracle is known.
    std::optional<RunAggregate> aggregate;
    double y0_mean = 0.0, y0_std = 0.0;  // over finished runs
    double mean_seconds = 0.0;
    std::optional<PathBatch> paths;  // test paths of the first run when emit_paths is set

    std::size_t diverged_runs() const;
};

/// Q seeded solves at N = steps, scored against the oracle.
RunReport run_experiment(const ExperimentConfig& config, std::size_t steps, const Oracle& oracle,
                         const Progress& progress = {});
RunReport run_experiment(const ExperimentConfig& config, const Progress& progress = {});

/// Recomputes the aggregate from the per-run records.
std::optional<RunAggregate> aggregate_runs(const std::vector<RunRecord>& runs);

struct ComparisonRow {
    std::size_t steps = 0;
    Scheme scheme = Scheme::dlbdp;
    Process process = Process::y;
    double mean_rel_mse = 0.0;
    double std_rel_mse = 0.0;
    double mean_seconds = 0.0;
    std::size_t diverged_runs = 0;
};

struct Comparison {
    std::vector<RunReport> reports;  // per N: baseline then differential
    std::vector<ComparisonRow> rows;
};

/// Throws ConfigError unless the configs differ only in scheme name and loss weights.
void check_comparable(const ExperimentConfig& baseline, const ExperimentConfig& differential);
/// Both schemes over n_list with shared seeds, so each pair sees identical paths.
Comparison compare(const ExperimentConfig& baseline, const ExperimentConfig& differential,
                   const Progress& progress = {});
/// Convenience: both configs derived from one by switching the scheme.
Comparison compare(const ExperimentConfig& config, const Progress& progress = {});

struct SweepRow {
    std::size_t steps = 0;
    Process process = Process::y;
    double mean_rel_mse = 0.0;
    double std_rel_mse = 0.0;
    double mean_seconds = 0.0;
};

struct Sweep {
    std::vector<RunReport> reports;
    std::vector<SweepRow> rows;  // t0 relative MSE per N
};

Sweep sweep_n(const ExperimentConfig& config, const std::vector<std::size_t>& n_list, const Progress& progress = {});

// --- Output files ---------------------------------------------------------------------

/// Columns n,t_n,process,mean_mse,std_mse,mean_rel_mse,std_rel_mse.
void write_metrics_csv(std::ostream& out, const RunReport& report);
/// Plot series over n = 0 .. N-1: mean MSE with the mean -/+ std band, and the same for relative MSE.
void write_series_csv(std::ostream& out, const RunReport& report);
/// One row per run: seed, diverged, seconds, y0, digest.
void write_runs_csv(std::ostream& out, const RunReport& report);
void write_summary(std::ostream& out, const RunReport& report);
std::string report_json(const RunReport& report);

void write_compare_csv(std::ostream& out, const Comparison& comparison);
void write_compare_summary(std::ostream& out, const Comparison& comparison);
void write_sweep_csv(std::ostream& out, const Sweep& sweep);
void write_sweep_summary(std::ostream& out, const Sweep& sweep);

/// report.json, metrics.csv, series.csv, runs.csv, summary.txt, config.toml (+ paths.csv).
void write_run_outputs(const std::filesystem::path& dir, const RunReport& report);
void write_compare_outputs(const std::filesystem::path& dir, const Comparison& comparison);
void write_sweep_outputs(const std::filesystem::path& dir, const Sweep& sweep);

/// Oracle values at t0 as JSON; Gamma is also given in price coordinates for ln-domain problems.
std::string oracle_json(const ExperimentConfig& config, const BsdeProblem& problem, const Oracle& oracle);

}  // namespace dlbdp
