#pragma once

#include "dlbdp/solver.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace dlbdp {

/// Relative error asked of a batch whose reference is zero on every sample.
class UndefinedMetric : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

enum class Process { y, z, gamma };

std::string to_string(Process p);
Process process_from_string(const std::string& name);

/// Batch mean of the squared Frobenius distance between rows.
double mse(const Matrix& approx, const Matrix& reference);

struct RelativeMse {
    double value = 0.0;
    std::size_t excluded = 0;  // samples whose reference row is zero
};

/// Batch mean of |approx - ref|^2 / |ref|^2 over the samples with a nonzero reference.
RelativeMse relative_mse(const Matrix& approx, const Matrix& reference);

/// Per-timestep errors of one process in one run. A relative value is NaN when the reference
/// vanished on the whole batch at that step.
struct ProcessErrorSeries {
    Process process = Process::y;
    std::vector<double> mse;           // n = 0 .. N
    std::vector<double> relative_mse;  // n = 0 .. N
    std::vector<std::size_t> excluded;
    std::size_t batch_size = 0;

    friend bool operator==(const ProcessErrorSeries&, const ProcessErrorSeries&) = default;
};

struct RunMetrics {
    std::vector<ProcessErrorSeries> series;
    double seconds = 0.0;

    const ProcessErrorSeries& of(Process p) const;
};

struct SeriesAggregate {
    Process process = Process::y;
    std::vector<double> mean_mse, std_mse;
    std::vector<double> mean_relative_mse, std_relative_mse;
};

/// Mean and population standard deviation over Q runs.
struct RunAggregate {
    std::size_t runs = 0;
    std::vector<SeriesAggregate> series;
    double mean_seconds = 0.0;
    double std_seconds = 0.0;

    const SeriesAggregate& of(Process p) const;
};

RunAggregate aggregate(const std::vector<RunMetrics>& runs);

/// Gamma(k1, k2) = Gamma_ln(k1, k2) / X^k2 for one d x d matrix and original-domain state x.
Matrix gamma_to_original_domain(const Matrix& gamma_ln, std::span<const double> x_original);
/// Batched form: rows of B x d^2 (row-major d x d) against rows of B x d.
Matrix gamma_batch_to_original_domain(const Matrix& gamma_ln, const Matrix& x_original);
/// Inverse map, Gamma_ln(k1, k2) = Gamma(k1, k2) X^k2.
Matrix gamma_to_ln_domain(const Matrix& gamma, std::span<const double> x_original);

/// Reference triples of the problem's exact solution along the test paths.
std::vector<TripleBatch> reference_triples(const BsdeProblem& problem, const TimeGrid& grid, const PathBatch& paths);

/// Scores every process at every timestep against the exact solution. Gamma of an ln-domain
/// problem is mapped to price coordinates first (Y and Z agree in both domains).
RunMetrics score_run(const BsdeProblem& problem, const TimeGrid& grid, const SolveResult& result);

/// Scores t0 only, for problems whose reference is known at the start point alone. Each
/// series has one entry; Z and Gamma are scored when the reference carries them.
RunMetrics score_t0(const SolveResult& result, const SolutionTriple& reference, bool with_derivatives);

}  // namespace dlbdp
