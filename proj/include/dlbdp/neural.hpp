#pragma once

#include "dlbdp/numcore.hpp"

#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

namespace dlbdp {

struct MlpShape {
    std::size_t input = 1;
    std::size_t output = 1;
    std::size_t hidden_layers = 2;
    std::size_t hidden_width = 32;

    /// eta (d0 + 1) + eta (eta + 1)(L - 1) + d1 (eta + 1)
    std::size_t parameter_count() const;
    std::size_t width(std::size_t layer) const;  // eta_0 .. eta_{L+1}

    friend bool operator==(const MlpShape&, const MlpShape&) = default;
};

/// Feed-forward network: affine layers with tanh on every hidden layer and an
/// affine output. Also serves as the container for parameter gradients and
/// optimizer moments, since those share its layout.
class Mlp {
public:
    Mlp() = default;
    /// All parameters zero.
    explicit Mlp(const MlpShape& shape);

    const MlpShape& shape() const noexcept { return shape_; }
    std::size_t layer_count() const noexcept { return weights_.size(); }

    Matrix& weight(std::size_t l) { return weights_[l]; }
    const Matrix& weight(std::size_t l) const { return weights_[l]; }
    Matrix& bias(std::size_t l) { return biases_[l]; }
    const Matrix& bias(std::size_t l) const { return biases_[l]; }

    /// Parameter blocks in serialization order W_1, B_1, ..., W_{L+1}, B_{L+1}.
    std::vector<std::span<double>> blocks();
    std::vector<std::span<const double>> blocks() const;
    std::vector<double> flatten() const;
    void assign(std::span<const double> flat);

    void set_zero();

    friend bool operator==(const Mlp&, const Mlp&) = default;

private:
    MlpShape shape_;
    std::vector<Matrix> weights_;  // eta_l x eta_{l-1}
    std::vector<Matrix> biases_;   // 1 x eta_l
};

/// Glorot-uniform weights, zero biases.
Mlp mlp_init(const MlpShape& shape, RngStream stream);

/// Hidden activations kept from a forward pass, reused by the backward passes.
struct ForwardTape {
    std::vector<Matrix> activations;  // activations[0] is the input batch
    Matrix output;
};

Matrix mlp_forward(const Mlp& net, const Matrix& x_batch);
ForwardTape mlp_forward_tape(const Mlp& net, const Matrix& x_batch);

/// Accumulates upstream^T d(output)/d(theta), summed over the batch, into grads.
/// If input_grad is non-null it receives upstream * d(output)/dx per sample.
void mlp_backward(const Mlp& net, const ForwardTape& tape, const Matrix& upstream, Mlp* grads,
                  Matrix* input_grad);

Mlp vjp_params(const Mlp& net, const Matrix& x_batch, const Matrix& upstream);
Matrix vjp_inputs(const Mlp& net, const Matrix& x_batch, const Matrix& upstream);
/// Per-sample d1 x d0 Jacobians, assembled from d1 unit-vector pulls.
std::vector<Matrix> input_jacobian(const Mlp& net, const Matrix& x_batch);

struct AdamState {
    std::size_t step = 0;
    Mlp first_moment;
    Mlp second_moment;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    AdamState() = default;
    explicit AdamState(const MlpShape& shape) : first_moment(shape), second_moment(shape) {}
};

/// Bias-corrected Adam update, in place.
void adam_step(Mlp& params, const Mlp& grads, AdamState& state, double lr);

class ScheduleExhausted : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Piecewise-constant learning rate: rates[i] applies for boundaries[i-1] < kappa <= boundaries[i].
struct LrSchedule {
    enum class Phase { terminal, interior };

    Phase phase = Phase::terminal;
    std::vector<std::size_t> boundaries;
    std::vector<double> rates;

    /// 7 plateaus over 24000 steps, starting at 1e-2.
    static LrSchedule terminal();
    /// 5 plateaus over 10000 steps, starting at 1e-3.
    static LrSchedule interior();

    std::size_t total_steps() const { return boundaries.empty() ? 0 : boundaries.back(); }
    /// Same plateau sequence with boundaries stretched proportionally to total_steps.
    LrSchedule rescaled(std::size_t total_steps) const;

    friend bool operator==(const LrSchedule&, const LrSchedule&) = default;
};

double lr_at(const LrSchedule& schedule, std::size_t kappa);

/// Little-endian blob: u64 header (d0, d1, L, eta) then f64 parameters.
void write_mlp(std::ostream& out, const Mlp& net);
Mlp read_mlp(std::istream& in);

}  // namespace dlbdp
