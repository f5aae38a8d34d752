#pragma once

#include "dlbdp/neural.hpp"
#include "dlbdp/sde.hpp"

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dlbdp {

enum class Scheme { dlbdp, dbdp };

std::string to_string(Scheme s);
Scheme scheme_from_string(const std::string& name);

/// Raised when the training loss exceeds the divergence threshold or stops being finite.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::size_t n, std::size_t step, double loss);
    std::size_t timestep() const noexcept { return n_; }
    std::size_t step() const noexcept { return step_; }
    double loss() const noexcept { return loss_; }

private:
    std::size_t n_, step_;
    double loss_;
};

struct SchemeConfig {
    Scheme scheme = Scheme::dlbdp;
    /// Unset weights default to (1/(d+1), d/(d+1)); DBDP always uses (1, 0).
    std::optional<double> omega1;
    std::optional<double> omega2;
    std::size_t steps = 8;  // N
    std::size_t batch_size = 1024;
    std::size_t terminal_steps = 24000;
    std::size_t interior_steps = 10000;
    /// Plateau sequences; boundaries are stretched to terminal_steps / interior_steps.
    LrSchedule terminal_schedule = LrSchedule::terminal();
    LrSchedule interior_schedule = LrSchedule::interior();
    std::size_t hidden_layers = 2;
    std::optional<std::size_t> hidden_width;  // default 100 + d
    std::uint64_t seed = 1;
    std::size_t test_batch = 1024;
    double divergence_threshold = 1e8;
    std::size_t loss_log_every = 100;
    std::optional<std::filesystem::path> checkpoint_dir;

    std::pair<double, double> weights(std::size_t d) const;
    std::size_t width(std::size_t d) const { return hidden_width.value_or(100 + d); }
    LrSchedule schedule_for(std::size_t n) const;
    std::size_t steps_for(std::size_t n) const { return n + 1 == steps ? terminal_steps : interior_steps; }
    /// Throws std::invalid_argument naming the offending field.
    void validate(std::size_t d) const;
};

/// Networks of one timestep. Gamma is absent under DBDP.
struct TimestepNets {
    Mlp y;      // d -> 1
    Mlp z;      // d -> d, the row Z
    Mlp gamma;  // d -> d*d, row-major d x d

    bool has_gamma() const { return gamma.layer_count() > 0; }
    friend bool operator==(const TimestepNets&, const TimestepNets&) = default;
};

TimestepNets init_nets(std::size_t d, const SchemeConfig& config, const RngStream& root);

/// Y (B x 1), Z (B x d) and Gamma (B x d^2, each row a row-major d x d matrix).
struct TripleBatch {
    Matrix y;
    Matrix z;
    Matrix gamma;
};

/// Y_N = g(X_N), Z_N = grad g b(T), Gamma_N = b(T)^T Hess g per sample.
TripleBatch terminal_triple(const BsdeProblem& problem, const Matrix& x_terminal);

/// Network outputs at raw states x (normalized internally). Under DBDP, Gamma comes from the
/// input Jacobian of the z-network rescaled by the normalization.
TripleBatch evaluate_nets(const TimestepNets& nets, const Matrix& x, const NormalizationStats& stats);

/// f_D = grad_x f D + grad_y f z + grad_z f (Gamma D), a row of length d.
std::vector<double> f_D_eval(const DriverPartials& partials, std::span<const double> z, const Matrix& gamma,
                             const Matrix& malliavin);

/// Everything one SGD step needs, with the targets already frozen.
struct StepBatch {
    std::size_t n = 0;
    double t = 0.0;
    double dt = 0.0;
    Matrix x;             // raw X_n, B x d
    Matrix x_normalized;  // network input
    Matrix dw;            // Delta W_n
    MalliavinPair malliavin;
    /// b^{-1}(t_{n+1}) D_n X_{n+1}, shared or per sample like the Malliavin pair.
    Matrix target_map;
    std::vector<Matrix> target_map_per_sample;
    Matrix y_next;  // B x 1
    Matrix z_next;  // B x d

    std::size_t size() const { return x.rows(); }
    const Matrix& target_map_for(std::size_t j) const {
        return target_map_per_sample.empty() ? target_map : target_map_per_sample[j];
    }
};

/// Simulates a fresh batch through t_{n+1} and evaluates the targets with the (n+1) networks,
/// or with the terminal triple when next is null (n = N - 1).
StepBatch make_step_batch(const BsdeProblem& problem, const TimeGrid& grid, std::size_t n,
                          const std::vector<NormalizationStats>& stats, const TimestepNets* next,
                          std::size_t batch_size, const RngStream& stream);

/// r_y = Y_{n+1} - y + f dt - z dW per sample (B x 1).
Matrix residual_y(const BsdeProblem& problem, const StepBatch& batch, const TripleBatch& out);
/// r_z = Z_{n+1} b^{-1} D_n X_{n+1} - z + f_D dt - (Gamma D_n X_n dW)^T per sample (B x d).
Matrix residual_z(const BsdeProblem& problem, const StepBatch& batch, const TripleBatch& out);

struct LossAndGrads {
    double loss = 0.0;
    double loss_y = 0.0;  // mean r_y^2
    double loss_z = 0.0;  // mean |r_z|^2 (zero under DBDP)
    TimestepNets grads;
};

/// omega1 mean r_y^2 + omega2 mean |r_z|^2 and its parameter gradients. Driver partials are
/// treated as constants inside f_D.
LossAndGrads loss_and_grads(const TimestepNets& nets, double omega1, double omega2, const BsdeProblem& problem,
                            const StepBatch& batch);
/// Baseline loss mean r_y^2 with gradients for the y- and z-networks only; never forms r_z.
LossAndGrads dbdp_loss_and_grads(const TimestepNets& nets, const BsdeProblem& problem, const StepBatch& batch);

struct TrainStats {
    std::vector<std::pair<std::size_t, double>> loss_curve;  // (step, loss), every loss_log_every steps
    double final_loss = 0.0;
    double seconds = 0.0;
};

/// Fresh nets at n = N - 1, otherwise a warm start from the (n+1) nets with new Adam state.
/// `next` supplies the targets and is never modified.
TimestepNets train_timestep(std::size_t n, const TimestepNets* next, const SchemeConfig& config,
                            const BsdeProblem& problem, const TimeGrid& grid,
                            const std::vector<NormalizationStats>& stats, const RngStream& root,
                            TrainStats* stats_out = nullptr);

struct SolveResult {
    std::vector<TimestepNets> nets;          // n = 0 .. N-1
    std::vector<TrainStats> training;        // n = 0 .. N-1
    std::vector<NormalizationStats> stats;   // n = 0 .. N
    PathBatch test_paths;
    std::vector<TripleBatch> estimates;      // n = 0 .. N (terminal triple at N)
    double seconds = 0.0;
    bool empirical_moments = false;

    /// Hash of every network parameter and every test-batch estimate.
    std::uint64_t digest() const;
};

RngStream root_stream(std::uint64_t seed);
RngStream test_stream(const RngStream& root);

SolveResult solve_backward(const SchemeConfig& config, const BsdeProblem& problem);

/// One file per network plus manifest.csv with columns n,t,file,loss_final.
void write_checkpoints(const std::filesystem::path& dir, const SolveResult& result, const TimeGrid& grid);

}  // namespace dlbdp
