#pragma once

#include "dlbdp/problems.hpp"

#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <vector>

namespace dlbdp {

class NumericalBlowup : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Uniform grid t_n = n T / N.
class TimeGrid {
public:
    TimeGrid(double terminal_time, std::size_t steps);

    double terminal_time() const noexcept { return terminal_time_; }
    std::size_t steps() const noexcept { return steps_; }
    double dt() const noexcept { return terminal_time_ / static_cast<double>(steps_); }
    double t(std::size_t n) const;

private:
    double terminal_time_;
    std::size_t steps_;
};

/// x + a(t, x) dt + b(t) dW, written into out (may alias x).
void euler_step(const BsdeProblem& problem, double t, double dt, std::span<const double> x,
                std::span<const double> dw, std::span<double> out);
std::vector<double> euler_step(const BsdeProblem& problem, double t, double dt, std::span<const double> x,
                               std::span<const double> dw);

/// Euler step for an arbitrary SDE with state-dependent coefficients. Forward simulation only;
/// the solver never sees such dynamics.
using DriftFn = std::function<void(double t, std::span<const double> x, std::span<double> out)>;
using DiffusionFn = std::function<Matrix(double t, std::span<const double> x)>;
std::vector<double> euler_step(const DriftFn& drift, const DiffusionFn& diffusion, double t, double dt,
                               std::span<const double> x, std::span<const double> dw);

/// Trajectories of B samples. states[n] and increments[n] are B x d; sample j occupies row j.
struct PathBatch {
    std::vector<Matrix> states;      // n = 0 .. through
    std::vector<Matrix> increments;  // n = 0 .. through - 1

    std::size_t batch_size() const { return states.empty() ? 0 : states.front().rows(); }
    std::size_t dim() const { return states.empty() ? 0 : states.front().cols(); }
    std::size_t last_step() const { return states.empty() ? 0 : states.size() - 1; }
};

/// Sample j draws all of its increments from stream.split(j) in one sequence, so the paths
/// are independent of batch order, and simulating through an earlier step yields a prefix
/// of the full trajectory. `through` defaults to N.
PathBatch simulate_paths(const BsdeProblem& problem, const TimeGrid& grid, std::size_t batch_size,
                         const RngStream& stream, std::optional<std::size_t> through = std::nullopt);

/// D_n X_n = b(t_n) and D_n X_{n+1} = (I + grad_x a(t_n, X_n) dt) b(t_n).
/// When the drift gradient is state independent, next_per_sample is empty and next applies to
/// every sample.
struct MalliavinPair {
    Matrix now;
    Matrix next;
    std::vector<Matrix> next_per_sample;

    const Matrix& next_for(std::size_t sample) const {
        return next_per_sample.empty() ? next : next_per_sample[sample];
    }
};

MalliavinPair malliavin_step(const BsdeProblem& problem, const TimeGrid& grid, std::size_t n,
                             const PathBatch& paths);

/// Per-coordinate statistics used to normalize network inputs at t_n.
struct NormalizationStats {
    std::vector<double> mean;
    std::vector<double> stddev;
    bool degenerate = false;  // some std is zero (always at t = 0): inputs are passed through raw
    bool empirical = false;   // moments were estimated by pre-simulation
};

constexpr std::size_t kEmpiricalMomentSamples = 100'000;

/// Analytic moments when the problem provides them; otherwise empirical moments from
/// kEmpiricalMomentSamples paths simulated on the grid with the given stream.
NormalizationStats normalization_stats(const BsdeProblem& problem, const TimeGrid& grid, std::size_t n,
                                       const RngStream& fallback);
/// Statistics for every n = 0 .. N, sharing one pre-simulation in the empirical case.
std::vector<NormalizationStats> normalization_table(const BsdeProblem& problem, const TimeGrid& grid,
                                                    const RngStream& fallback,
                                                    std::size_t empirical_samples = kEmpiricalMomentSamples);

/// (x - mean) / std row by row; identity copy when stats are degenerate.
Matrix normalize_inputs(const Matrix& x, const NormalizationStats& stats);

/// CSV with columns sample,n,t,X1..Xd.
void write_paths_csv(std::ostream& out, const PathBatch& paths, const TimeGrid& grid);

}  // namespace dlbdp
