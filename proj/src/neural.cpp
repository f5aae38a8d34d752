#include "dlbdp/neural.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>

namespace dlbdp {

std::size_t MlpShape::width(std::size_t layer) const {
    if (layer == 0) return input;
    if (layer == hidden_layers + 1) return output;
    return hidden_width;
}

std::size_t MlpShape::parameter_count() const {
    std::size_t total = 0;
    for (std::size_t l = 1; l <= hidden_layers + 1; ++l) total += width(l) * (width(l - 1) + 1);
    return total;
}

Mlp::Mlp(const MlpShape& shape) : shape_(shape) {
    if (shape.input == 0 || shape.output == 0 || shape.hidden_layers == 0 || shape.hidden_width == 0) {
        throw std::invalid_argument("Mlp: all widths and the hidden layer count must be >= 1");
    }
    for (std::size_t l = 1; l <= shape.hidden_layers + 1; ++l) {
        weights_.emplace_back(shape.width(l), shape.width(l - 1));
        biases_.emplace_back(1, shape.width(l));
    }
}

std::vector<std::span<double>> Mlp::blocks() {
    std::vector<std::span<double>> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        out.push_back(weights_[l].data());
        out.push_back(biases_[l].data());
    }
    return out;
}

std::vector<std::span<const double>> Mlp::blocks() const {
    std::vector<std::span<const double>> out;
    for (std::size_t l = 0; l < weights_.size(); ++l) {
        out.push_back(weights_[l].data());
        out.push_back(biases_[l].data());
    }
    return out;
}

std::vector<double> Mlp::flatten() const {
    std::vector<double> flat;
    flat.reserve(shape_.parameter_count());
    for (auto b : blocks()) flat.insert(flat.end(), b.begin(), b.end());
    return flat;
}

void Mlp::assign(std::span<const double> flat) {
    if (flat.size() != shape_.parameter_count()) throw ShapeError("Mlp::assign: wrong parameter count");
    std::size_t at = 0;
    for (auto b : blocks()) {
        std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), b.size(), b.begin());
        at += b.size();
    }
}

void Mlp::set_zero() {
    for (auto b : blocks()) std::fill(b.begin(), b.end(), 0.0);
}

Mlp mlp_init(const MlpShape& shape, RngStream stream) {
    Mlp net(shape);
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        Matrix& w = net.weight(l);
        const double limit = std::sqrt(6.0 / static_cast<double>(w.rows() + w.cols()));
        stream.fill_uniforms(w.data());
        for (double& v : w.data()) v = limit * (2.0 * v - 1.0);
    }
    return net;
}

namespace {

void check_input(const Mlp& net, const Matrix& x) {
    if (x.cols() != net.shape().input) {
        throw ShapeError("mlp: input has " + std::to_string(x.cols()) + " columns, network expects " +
                         std::to_string(net.shape().input));
    }
}

void add_bias(Matrix& z, const Matrix& bias) {
    const auto b = bias.data();
    for (std::size_t r = 0; r < z.rows(); ++r) {
        auto row = z.row_span(r);
        for (std::size_t c = 0; c < row.size(); ++c) row[c] += b[c];
    }
}

}  // namespace

ForwardTape mlp_forward_tape(const Mlp& net, const Matrix& x_batch) {
    check_input(net, x_batch);
    ForwardTape tape;
    tape.activations.reserve(net.layer_count());
    tape.activations.push_back(x_batch);
    const std::size_t last = net.layer_count() - 1;
    for (std::size_t l = 0; l < net.layer_count(); ++l) {
        Matrix z = matmul_nt(tape.activations.back(), net.weight(l));
        add_bias(z, net.bias(l));
        if (l == last) {
            tape.output = std::move(z);
        } else {
            for (double& v : z.data()) v = std::tanh(v);
            tape.activations.push_back(std::move(z));
        }
    }
    return tape;
}

Matrix mlp_forward(const Mlp& net, const Matrix& x_batch) {
    return std::move(mlp_forward_tape(net, x_batch).output);
}

void mlp_backward(const Mlp& net, const ForwardTape& tape, const Matrix& upstream, Mlp* grads,
                  Matrix* input_grad) {
    const std::size_t batch = tape.activations.front().rows();
    if (upstream.rows() != batch || upstream.cols() != net.shape().output) {
        throw ShapeError("mlp_backward: upstream must be " + std::to_string(batch) + "x" +
                         std::to_string(net.shape().output));
    }
    Matrix delta = upstream;
    for (std::size_t l = net.layer_count(); l-- > 0;) {
        const Matrix& below = tape.activations[l];
        if (grads != nullptr) {
            grads->weight(l) += matmul_tn(delta, below);
            auto gb = grads->bias(l).data();
            for (std::size_t r = 0; r < delta.rows(); ++r) {
                const auto row = delta.row_span(r);
                for (std::size_t c = 0; c < row.size(); ++c) gb[c] += row[c];
            }
        }
        if (l == 0 && input_grad == nullptr) break;
        Matrix pulled = matmul(delta, net.weight(l));
        if (l == 0) {
            *input_grad = std::move(pulled);
            break;
        }
        auto p = pulled.data();
        const auto h = below.data();
        for (std::size_t i = 0; i < p.size(); ++i) p[i] *= 1.0 - h[i] * h[i];
        delta = std::move(pulled);
    }
}

Mlp vjp_params(const Mlp& net, const Matrix& x_batch, const Matrix& upstream) {
    Mlp grads(net.shape());
    mlp_backward(net, mlp_forward_tape(net, x_batch), upstream, &grads, nullptr);
    return grads;
}

Matrix vjp_inputs(const Mlp& net, const Matrix& x_batch, const Matrix& upstream) {
    Matrix g;
    mlp_backward(net, mlp_forward_tape(net, x_batch), upstream, nullptr, &g);
    return g;
}

std::vector<Matrix> input_jacobian(const Mlp& net, const Matrix& x_batch) {
    const ForwardTape tape = mlp_forward_tape(net, x_batch);
    const std::size_t batch = x_batch.rows();
    const std::size_t d0 = net.shape().input;
    const std::size_t d1 = net.shape().output;
    std::vector<Matrix> jac(batch, Matrix(d1, d0));
    for (std::size_t k = 0; k < d1; ++k) {
        Matrix unit(batch, d1);
        for (std::size_t r = 0; r < batch; ++r) unit(r, k) = 1.0;
        Matrix g;
        mlp_backward(net, tape, unit, nullptr, &g);
        for (std::size_t r = 0; r < batch; ++r)
            for (std::size_t c = 0; c < d0; ++c) jac[r](k, c) = g(r, c);
    }
    return jac;
}

void adam_step(Mlp& params, const Mlp& grads, AdamState& state, double lr) {
    if (!(params.shape() == grads.shape())) throw ShapeError("adam_step: gradient shape mismatch");
    if (state.first_moment.layer_count() == 0) state = AdamState(params.shape());
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(state.beta1, t);
    const double correction2 = 1.0 - std::pow(state.beta2, t);

    auto p_blocks = params.blocks();
    const auto g_blocks = grads.blocks();
    auto m_blocks = state.first_moment.blocks();
    auto v_blocks = state.second_moment.blocks();
    for (std::size_t b = 0; b < p_blocks.size(); ++b) {
        auto p = p_blocks[b];
        const auto g = g_blocks[b];
        auto m = m_blocks[b];
        auto v = v_blocks[b];
        for (std::size_t i = 0; i < p.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double m_hat = m[i] / correction1;
            const double v_hat = v[i] / correction2;
            p[i] -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
        }
    }
}

LrSchedule LrSchedule::terminal() {
    return {Phase::terminal,
            {2000, 4000, 8000, 12000, 16000, 20000, 24000},
            {1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5, 1e-5}};
}

LrSchedule LrSchedule::interior() {
    return {Phase::interior, {2000, 4000, 6000, 8000, 10000}, {1e-3, 3e-4, 1e-4, 3e-5, 1e-5}};
}

LrSchedule LrSchedule::rescaled(std::size_t total) const {
    LrSchedule out = *this;
    const std::size_t old_total = total_steps();
    for (auto& b : out.boundaries) {
        // Round to nearest, keeping the integer arithmetic exact.
        b = (b * total + old_total / 2) / old_total;
    }
    if (!out.boundaries.empty()) out.boundaries.back() = total;
    return out;
}

double lr_at(const LrSchedule& schedule, std::size_t kappa) {
    if (kappa == 0 || kappa > schedule.total_steps()) {
        throw ScheduleExhausted("lr_at: step " + std::to_string(kappa) + " outside [1, " +
                                std::to_string(schedule.total_steps()) + "]");
    }
    for (std::size_t i = 0; i < schedule.boundaries.size(); ++i)
        if (kappa <= schedule.boundaries[i]) return schedule.rates[i];
    return schedule.rates.back();
}

namespace {

template <typename T>
void put_le(std::ostream& out, T value) {
    static_assert(sizeof(T) == 8);
    std::uint64_t bits;
    std::memcpy(&bits, &value, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    char bytes[8];
    std::memcpy(bytes, &bits, 8);
    out.write(bytes, 8);
}

template <typename T>
T get_le(std::istream& in) {
    char bytes[8];
    if (!in.read(bytes, 8)) throw std::runtime_error("read_mlp: truncated blob");
    std::uint64_t bits;
    std::memcpy(&bits, bytes, 8);
    if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
    T value;
    std::memcpy(&value, &bits, 8);
    return value;
}

}  // namespace

void write_mlp(std::ostream& out, const Mlp& net) {
    const auto& s = net.shape();
    put_le<std::uint64_t>(out, s.input);
    put_le<std::uint64_t>(out, s.output);
    put_le<std::uint64_t>(out, s.hidden_layers);
    put_le<std::uint64_t>(out, s.hidden_width);
    for (auto block : net.blocks())
        for (double v : block) put_le<double>(out, v);
}

Mlp read_mlp(std::istream& in) {
    MlpShape s;
    s.input = get_le<std::uint64_t>(in);
    s.output = get_le<std::uint64_t>(in);
    s.hidden_layers = get_le<std::uint64_t>(in);
    s.hidden_width = get_le<std::uint64_t>(in);
    constexpr std::uint64_t kSane = 1u << 20;
    if (s.input > kSane || s.output > kSane || s.hidden_layers > 1024 || s.hidden_width > kSane) {
        throw std::runtime_error("read_mlp: implausible header");
    }
    Mlp net(s);
    for (auto block : net.blocks())
        for (double& v : block) v = get_le<double>(in);
    return net;
}

}  // namespace dlbdp
