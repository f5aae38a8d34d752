#include "dlbdp/solver.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>

namespace dlbdp {

namespace {

// Top-level labels for the streams derived from a run's root.
constexpr std::uint64_t kInitLabel = 1;
constexpr std::uint64_t kTrainLabel = 2;
constexpr std::uint64_t kTestLabel = 3;
constexpr std::uint64_t kMomentsLabel = 4;

enum NetKind : std::uint64_t { kNetY = 0, kNetZ = 1, kNetGamma = 2 };

}  // namespace

std::string to_string(Scheme s) { return s == Scheme::dlbdp ? "dlbdp" : "dbdp"; }

Scheme scheme_from_string(const std::string& name) {
    if (name == "dlbdp" || name == "DLBDP") return Scheme::dlbdp;
    if (name == "dbdp" || name == "DBDP") return Scheme::dbdp;
    throw std::invalid_argument("unknown scheme '" + name + "' (expected dlbdp or dbdp)");
}

DivergenceError::DivergenceError(std::size_t n, std::size_t step, double loss)
    : std::runtime_error("training diverged at timestep n = " + std::to_string(n) + ", step " +
                         std::to_string(step) + ": loss = " + std::to_string(loss)),
      n_(n), step_(step), loss_(loss) {}

// --- configuration ----------------------------------------------------------------

std::pair<double, double> SchemeConfig::weights(std::size_t d) const {
    if (scheme == Scheme::dbdp) return {1.0, 0.0};
    if (omega1 && omega2) return {*omega1, *omega2};
    if (omega1) return {*omega1, 1.0 - *omega1};
    if (omega2) return {1.0 - *omega2, *omega2};
    const double dd = static_cast<double>(d);
    return {1.0 / (dd + 1.0), dd / (dd + 1.0)};
}

LrSchedule SchemeConfig::schedule_for(std::size_t n) const {
    const LrSchedule& base = n + 1 == steps ? terminal_schedule : interior_schedule;
    const std::size_t k = steps_for(n);
    if (k == base.total_steps() || k == 0) return base;
    return base.rescaled(k);
}

void SchemeConfig::validate(std::size_t d) const {
    auto fail = [](const std::string& what) { throw std::invalid_argument("scheme config: " + what); };
    if (steps == 0) fail("N must be >= 1");
    if (batch_size == 0) fail("batch_size must be >= 1");
    if (test_batch == 0) fail("test_batch must be >= 1");
    if (hidden_layers == 0) fail("hidden_layers must be >= 1");
    if (width(d) == 0) fail("hidden_width must be >= 1");
    const auto [w1, w2] = weights(d);
    if (!(w1 >= 0.0 && w1 <= 1.0 && w2 >= 0.0 && w2 <= 1.0)) fail("omega1 and omega2 must lie in [0, 1]");
    if (std::abs(w1 + w2 - 1.0) > 1e-12) fail("omega1 + omega2 must equal 1");
    for (const auto* s : {&terminal_schedule, &interior_schedule}) {
        if (s->boundaries.empty() || s->boundaries.size() != s->rates.size())
            fail("learning-rate schedules need matching, non-empty boundaries and rates");
        for (double r : s->rates)
            if (!(r > 0.0) || !std::isfinite(r)) fail("learning rates must be positive");
    }
    if (!(divergence_threshold > 0.0)) fail("divergence_threshold must be positive");
    if (loss_log_every == 0) fail("loss_log_every must be >= 1");
}

TimestepNets init_nets(std::size_t d, const SchemeConfig& config, const RngStream& root) {
    const std::size_t eta = config.width(d);
    const std::size_t layers = config.hidden_layers;
    auto init = [&](std::size_t out, NetKind kind) {
        return mlp_init({d, out, layers, eta}, root.split(stream_label({kInitLabel, kind})));
    };
    TimestepNets nets{init(1, kNetY), init(d, kNetZ), Mlp()};
    if (config.scheme == Scheme::dlbdp) nets.gamma = init(d * d, kNetGamma);
    return nets;
}

RngStream root_stream(std::uint64_t seed) { return RngStream(seed, stream_label({0xd1bd9ULL})); }

RngStream test_stream(const RngStream& root) { return root.split(stream_label({kTestLabel})); }

// --- batch evaluation -------------------------------------------------------------

TripleBatch terminal_triple(const BsdeProblem& problem, const Matrix& x_terminal) {
    const std::size_t d = problem.dim();
    if (x_terminal.cols() != d) throw ShapeError("terminal_triple: states must have d columns");
    const std::size_t B = x_terminal.rows();
    TripleBatch out{Matrix(B, 1), Matrix(B, d), Matrix(B, d * d)};
    for (std::size_t j = 0; j < B; ++j) {
        const auto x = x_terminal.row_span(j);
        out.y(j, 0) = problem.payoff(x);
        const auto z = problem.terminal_z(x);
        std::copy(z.begin(), z.end(), out.z.row_span(j).begin());
        const Matrix g = problem.terminal_gamma(x);
        std::copy(g.data().begin(), g.data().end(), out.gamma.row_span(j).begin());
    }
    return out;
}

TripleBatch evaluate_nets(const TimestepNets& nets, const Matrix& x, const NormalizationStats& stats) {
    const std::size_t d = x.cols();
    const std::size_t B = x.rows();
    const Matrix xh = normalize_inputs(x, stats);
    TripleBatch out{mlp_forward(nets.y, xh), mlp_forward(nets.z, xh), Matrix()};
    if (nets.has_gamma()) {
        out.gamma = mlp_forward(nets.gamma, xh);
        return out;
    }
    // d z / d x = (d z / d x_hat) diag(1 / std).
    const auto jac = input_jacobian(nets.z, xh);
    out.gamma = Matrix(B, d * d);
    for (std::size_t j = 0; j < B; ++j) {
        auto row = out.gamma.row_span(j);
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b)
                row[a * d + b] = stats.degenerate ? jac[j](a, b) : jac[j](a, b) / stats.stddev[b];
    }
    return out;
}

std::vector<double> f_D_eval(const DriverPartials& p, std::span<const double> z, const Matrix& gamma,
                             const Matrix& malliavin) {
    const std::size_t d = z.size();
    const auto fx_d = vecmat(p.dx, malliavin);
    const auto fz_g = vecmat(p.dz, gamma);
    const auto fz_gd = vecmat(fz_g, malliavin);
    std::vector<double> out(d);
    for (std::size_t b = 0; b < d; ++b) out[b] = fx_d[b] + p.dy * z[b] + fz_gd[b];
    return out;
}

StepBatch make_step_batch(const BsdeProblem& problem, const TimeGrid& grid, std::size_t n,
                          const std::vector<NormalizationStats>& stats, const TimestepNets* next,
                          std::size_t batch_size, const RngStream& stream) {
    if (n >= grid.steps()) throw std::out_of_range("make_step_batch: need n < N");
    if (stats.size() != grid.steps() + 1) throw ShapeError("make_step_batch: need statistics for n = 0 .. N");
    PathBatch paths = simulate_paths(problem, grid, batch_size, stream, n + 1);

    StepBatch batch;
    batch.n = n;
    batch.t = grid.t(n);
    batch.dt = grid.dt();
    batch.malliavin = malliavin_step(problem, grid, n, paths);
    const Matrix b_inv = problem.diffusion_inverse(grid.t(n + 1));
    if (batch.malliavin.next_per_sample.empty()) {
        batch.target_map = matmul(b_inv, batch.malliavin.next);
    } else {
        for (const auto& m : batch.malliavin.next_per_sample) batch.target_map_per_sample.push_back(matmul(b_inv, m));
    }

    const Matrix& x_next = paths.states[n + 1];
    if (next == nullptr) {
        const std::size_t d = problem.dim();
        batch.y_next = Matrix(batch_size, 1);
        batch.z_next = Matrix(batch_size, d);
        for (std::size_t j = 0; j < batch_size; ++j) {
            const auto x = x_next.row_span(j);
            batch.y_next(j, 0) = problem.payoff(x);
            const auto z = problem.terminal_z(x);
            std::copy(z.begin(), z.end(), batch.z_next.row_span(j).begin());
        }
    } else {
        const Matrix xh_next = normalize_inputs(x_next, stats[n + 1]);
        batch.y_next = mlp_forward(next->y, xh_next);
        batch.z_next = mlp_forward(next->z, xh_next);
    }

    batch.x = std::move(paths.states[n]);
    batch.x_normalized = normalize_inputs(batch.x, stats[n]);
    batch.dw = std::move(paths.increments[n]);
    return batch;
}

// --- residuals --------------------------------------------------------------------

namespace {

double y_residual(double y_next, double y, double f, double dt, std::span<const double> z,
                  std::span<const double> dw) {
    return y_next - y + f * dt - dot(z, dw);
}

struct ZTerms {
    std::vector<double> residual;  // r_z
    std::vector<double> v;         // D_n X_n dW
};

ZTerms z_residual(const StepBatch& batch, std::size_t j, const DriverPartials& p, std::span<const double> z,
                  std::span<const double> gamma_row) {
    const std::size_t d = z.size();
    const Matrix& dn = batch.malliavin.now;
    const Matrix g(d, d, std::vector<double>(gamma_row.begin(), gamma_row.end()));
    const auto projected = vecmat(batch.z_next.row_span(j), batch.target_map_for(j));
    const auto fd = f_D_eval(p, z, g, dn);
    ZTerms terms{std::vector<double>(d), matvec(dn, batch.dw.row_span(j))};
    const auto gv = matvec(g, terms.v);
    for (std::size_t b = 0; b < d; ++b) terms.residual[b] = projected[b] - z[b] + fd[b] * batch.dt - gv[b];
    return terms;
}

void check_outputs(const StepBatch& batch, const TripleBatch& out, bool need_gamma) {
    const std::size_t B = batch.size(), d = batch.x.cols();
    if (out.y.rows() != B || out.y.cols() != 1 || out.z.rows() != B || out.z.cols() != d)
        throw ShapeError("residual: network outputs do not match the batch");
    if (need_gamma && (out.gamma.rows() != B || out.gamma.cols() != d * d))
        throw ShapeError("residual: Gamma output must be B x d^2");
}

}  // namespace

Matrix residual_y(const BsdeProblem& problem, const StepBatch& batch, const TripleBatch& out) {
    check_outputs(batch, out, false);
    Matrix r(batch.size(), 1);
    for (std::size_t j = 0; j < batch.size(); ++j) {
        const auto x = batch.x.row_span(j);
        const auto z = out.z.row_span(j);
        const double f = problem.driver(batch.t, x, out.y(j, 0), z);
        r(j, 0) = y_residual(batch.y_next(j, 0), out.y(j, 0), f, batch.dt, z, batch.dw.row_span(j));
    }
    return r;
}

Matrix residual_z(const BsdeProblem& problem, const StepBatch& batch, const TripleBatch& out) {
    check_outputs(batch, out, true);
    Matrix r(batch.size(), batch.x.cols());
    for (std::size_t j = 0; j < batch.size(); ++j) {
        const auto x = batch.x.row_span(j);
        const auto z = out.z.row_span(j);
        const auto p = problem.driver_partials(batch.t, x, out.y(j, 0), z);
        const auto terms = z_residual(batch, j, p, z, out.gamma.row_span(j));
        std::copy(terms.residual.begin(), terms.residual.end(), r.row_span(j).begin());
    }
    return r;
}

// --- losses -----------------------------------------------------------------------

LossAndGrads loss_and_grads(const TimestepNets& nets, double omega1, double omega2, const BsdeProblem& problem,
                            const StepBatch& batch) {
    if (!nets.has_gamma()) throw std::invalid_argument("loss_and_grads: the differential loss needs a Gamma network");
    const std::size_t B = batch.size();
    const std::size_t d = batch.x.cols();
    const double dt = batch.dt;
    const ForwardTape ty = mlp_forward_tape(nets.y, batch.x_normalized);
    const ForwardTape tz = mlp_forward_tape(nets.z, batch.x_normalized);
    const ForwardTape tg = mlp_forward_tape(nets.gamma, batch.x_normalized);

    const double cy = 2.0 * omega1 / static_cast<double>(B);
    const double cz = 2.0 * omega2 / static_cast<double>(B);
    Matrix up_y(B, 1), up_z(B, d), up_g(B, d * d);
    double sum_y = 0.0, sum_z = 0.0;
    const Matrix& dn = batch.malliavin.now;
    std::vector<double> uz(d);
    for (std::size_t j = 0; j < B; ++j) {
        const auto x = batch.x.row_span(j);
        const double y = ty.output(j, 0);
        const auto z = tz.output.row_span(j);
        const auto dw = batch.dw.row_span(j);
        const double f = problem.driver(batch.t, x, y, z);
        const auto p = problem.driver_partials(batch.t, x, y, z);
        const double ry = y_residual(batch.y_next(j, 0), y, f, dt, z, dw);
        const auto zt = z_residual(batch, j, p, z, tg.output.row_span(j));
        sum_y += ry * ry;
        for (double v : zt.residual) sum_z += v * v;

        const double uy = cy * ry;
        up_y(j, 0) = uy * (p.dy * dt - 1.0);
        auto gz = up_z.row_span(j);
        for (std::size_t c = 0; c < d; ++c) gz[c] = uy * (p.dz[c] * dt - dw[c]);
        if (omega2 != 0.0) {
            for (std::size_t c = 0; c < d; ++c) uz[c] = cz * zt.residual[c];
            for (std::size_t c = 0; c < d; ++c) gz[c] += uz[c] * (p.dy * dt - 1.0);
            // dL/dGamma(a, c) = dt fz_a (D_n uz^T)_c - uz_a v_c
            const auto dn_uz = matvec(dn, uz);
            auto gg = up_g.row_span(j);
            for (std::size_t a = 0; a < d; ++a)
                for (std::size_t c = 0; c < d; ++c) gg[a * d + c] = dt * p.dz[a] * dn_uz[c] - uz[a] * zt.v[c];
        }
    }

    LossAndGrads out;
    out.loss_y = sum_y / static_cast<double>(B);
    out.loss_z = sum_z / static_cast<double>(B);
    out.loss = omega1 * out.loss_y + omega2 * out.loss_z;
    out.grads = {Mlp(nets.y.shape()), Mlp(nets.z.shape()), Mlp(nets.gamma.shape())};
    mlp_backward(nets.y, ty, up_y, &out.grads.y, nullptr);
    mlp_backward(nets.z, tz, up_z, &out.grads.z, nullptr);
    mlp_backward(nets.gamma, tg, up_g, &out.grads.gamma, nullptr);
    return out;
}

LossAndGrads dbdp_loss_and_grads(const TimestepNets& nets, const BsdeProblem& problem, const StepBatch& batch) {
    const std::size_t B = batch.size();
    const std::size_t d = batch.x.cols();
    const double dt = batch.dt;
    const ForwardTape ty = mlp_forward_tape(nets.y, batch.x_normalized);
    const ForwardTape tz = mlp_forward_tape(nets.z, batch.x_normalized);

    const double cy = 2.0 / static_cast<double>(B);
    Matrix up_y(B, 1), up_z(B, d);
    double sum_y = 0.0;
    for (std::size_t j = 0; j < B; ++j) {
        const auto x = batch.x.row_span(j);
        const double y = ty.output(j, 0);
        const auto z = tz.output.row_span(j);
        const auto dw = batch.dw.row_span(j);
        const double f = problem.driver(batch.t, x, y, z);
        const auto p = problem.driver_partials(batch.t, x, y, z);
        const double ry = y_residual(batch.y_next(j, 0), y, f, dt, z, dw);
        sum_y += ry * ry;
        const double uy = cy * ry;
        up_y(j, 0) = uy * (p.dy * dt - 1.0);
        auto gz = up_z.row_span(j);
        for (std::size_t c = 0; c < d; ++c) gz[c] = uy * (p.dz[c] * dt - dw[c]);
    }

    LossAndGrads out;
    out.loss_y = sum_y / static_cast<double>(B);
    out.loss = out.loss_y;
    out.grads = {Mlp(nets.y.shape()), Mlp(nets.z.shape()), Mlp()};
    mlp_backward(nets.y, ty, up_y, &out.grads.y, nullptr);
    mlp_backward(nets.z, tz, up_z, &out.grads.z, nullptr);
    return out;
}

// --- training ---------------------------------------------------------------------

TimestepNets train_timestep(std::size_t n, const TimestepNets* next, const SchemeConfig& config,
                            const BsdeProblem& problem, const TimeGrid& grid,
                            const std::vector<NormalizationStats>& stats, const RngStream& root,
                            TrainStats* stats_out) {
    const auto started = std::chrono::steady_clock::now();
    const std::size_t d = problem.dim();
    const bool terminal = n + 1 == grid.steps();
    if (!terminal && next == nullptr) throw std::invalid_argument("train_timestep: interior steps need the (n+1) nets");

    TimestepNets nets = terminal ? init_nets(d, config, root) : *next;
    const auto [omega1, omega2] = config.weights(d);
    const std::size_t steps = config.steps_for(n);
    const LrSchedule schedule = config.schedule_for(n);
    AdamState adam_y(nets.y.shape()), adam_z(nets.z.shape()), adam_g;
    if (nets.has_gamma()) adam_g = AdamState(nets.gamma.shape());

    TrainStats log;
    for (std::size_t kappa = 1; kappa <= steps; ++kappa) {
        const RngStream stream = root.split(stream_label({kTrainLabel, n, kappa}));
        const StepBatch batch = make_step_batch(problem, grid, n, stats, terminal ? nullptr : next,
                                                config.batch_size, stream);
        LossAndGrads lg = config.scheme == Scheme::dbdp ? dbdp_loss_and_grads(nets, problem, batch)
                                                         : loss_and_grads(nets, omega1, omega2, problem, batch);
        if (!std::isfinite(lg.loss) || lg.loss > config.divergence_threshold) throw DivergenceError(n, kappa, lg.loss);
        const double lr = lr_at(schedule, kappa);
        adam_step(nets.y, lg.grads.y, adam_y, lr);
        adam_step(nets.z, lg.grads.z, adam_z, lr);
        if (nets.has_gamma()) adam_step(nets.gamma, lg.grads.gamma, adam_g, lr);
        if (kappa % config.loss_log_every == 0 || kappa == 1 || kappa == steps) log.loss_curve.emplace_back(kappa, lg.loss);
        log.final_loss = lg.loss;
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (stats_out != nullptr) *stats_out = std::move(log);
    return nets;
}

SolveResult solve_backward(const SchemeConfig& config, const BsdeProblem& problem) {
    const auto started = std::chrono::steady_clock::now();
    const std::size_t d = problem.dim();
    config.validate(d);
    const TimeGrid grid(problem.terminal_time(), config.steps);
    const RngStream root = root_stream(config.seed);
    const std::size_t N = config.steps;

    SolveResult result;
    result.stats = normalization_table(problem, grid, root.split(stream_label({kMomentsLabel})));
    result.empirical_moments = result.stats.back().empirical;
    result.nets.resize(N);
    result.training.resize(N);
    for (std::size_t n = N; n-- > 0;) {
        result.nets[n] = train_timestep(n, n + 1 < N ? &result.nets[n + 1] : nullptr, config, problem, grid,
                                        result.stats, root, &result.training[n]);
    }

    result.test_paths = simulate_paths(problem, grid, config.test_batch, test_stream(root));
    for (std::size_t n = 0; n < N; ++n)
        result.estimates.push_back(evaluate_nets(result.nets[n], result.test_paths.states[n], result.stats[n]));
    result.estimates.push_back(terminal_triple(problem, result.test_paths.states[N]));
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    if (config.checkpoint_dir) write_checkpoints(*config.checkpoint_dir, result, grid);
    return result;
}

std::uint64_t SolveResult::digest() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& nets : nets) {
        h = dlbdp::digest(nets.y.flatten(), h);
        h = dlbdp::digest(nets.z.flatten(), h);
        if (nets.has_gamma()) h = dlbdp::digest(nets.gamma.flatten(), h);
    }
    for (const auto& e : estimates) {
        h = dlbdp::digest(e.y.data(), h);
        h = dlbdp::digest(e.z.data(), h);
        h = dlbdp::digest(e.gamma.data(), h);
    }
    return h;
}

namespace {

std::string shortest(double v) {
    char buf[32];
    return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

}  // namespace

void write_checkpoints(const std::filesystem::path& dir, const SolveResult& result, const TimeGrid& grid) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.csv");
    if (!manifest) throw std::runtime_error("cannot write " + (dir / "manifest.csv").string());
    manifest << "n,t,file,loss_final\n";
    auto save = [&](const Mlp& net, const std::string& name) {
        std::ofstream out(dir / name, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + (dir / name).string());
        write_mlp(out, net);
    };
    for (std::size_t n = 0; n < result.nets.size(); ++n) {
        const auto& nets = result.nets[n];
        std::vector<std::pair<const Mlp*, std::string>> files{{&nets.y, "y"}, {&nets.z, "z"}};
        if (nets.has_gamma()) files.emplace_back(&nets.gamma, "gamma");
        for (const auto& [net, kind] : files) {
            const std::string name = "step" + std::to_string(n) + "_" + kind + ".bin";
            save(*net, name);
            manifest << n << ',' << shortest(grid.t(n)) << ',' << name << ',' << shortest(result.training[n].final_loss)
                     << '\n';
        }
    }
}

}  // namespace dlbdp
