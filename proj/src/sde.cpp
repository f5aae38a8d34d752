#include "dlbdp/sde.hpp"

#include <charconv>
#include <cmath>
#include <ostream>

namespace dlbdp {

TimeGrid::TimeGrid(double terminal_time, std::size_t steps) : terminal_time_(terminal_time), steps_(steps) {
    if (!(terminal_time > 0.0) || !std::isfinite(terminal_time))
        throw std::invalid_argument("TimeGrid: T must be positive and finite");
    if (steps == 0) throw std::invalid_argument("TimeGrid: N must be >= 1");
}

double TimeGrid::t(std::size_t n) const {
    if (n > steps_) throw std::out_of_range("TimeGrid: index beyond N");
    if (n == steps_) return terminal_time_;
    return static_cast<double>(n) * terminal_time_ / static_cast<double>(steps_);
}

namespace {

void check_finite(std::span<const double> x, double t) {
    for (double v : x)
        if (!std::isfinite(v))
            throw NumericalBlowup("euler_step: non-finite state after the step from t = " + std::to_string(t));
}

// out = x + a dt + b dw, accumulated in a fixed order shared by every caller.
void advance(std::span<const double> x, std::span<const double> a, double dt, const Matrix& b,
             std::span<const double> dw, std::span<double> out) {
    for (std::size_t k = 0; k < x.size(); ++k) {
        double s = x[k] + a[k] * dt;
        for (std::size_t i = 0; i < dw.size(); ++i) s += b(k, i) * dw[i];
        out[k] = s;
    }
}

}  // namespace

void euler_step(const BsdeProblem& problem, double t, double dt, std::span<const double> x,
                std::span<const double> dw, std::span<double> out) {
    const std::size_t d = problem.dim();
    if (x.size() != d || dw.size() != d || out.size() != d) throw ShapeError("euler_step: state must have length d");
    if (!(dt > 0.0)) throw std::invalid_argument("euler_step: dt must be positive");
    std::vector<double> a(d);
    problem.drift(t, x, a);
    advance(x, a, dt, problem.diffusion(t), dw, out);
    check_finite(out, t);
}

std::vector<double> euler_step(const BsdeProblem& problem, double t, double dt, std::span<const double> x,
                               std::span<const double> dw) {
    std::vector<double> out(x.size());
    euler_step(problem, t, dt, x, dw, out);
    return out;
}

std::vector<double> euler_step(const DriftFn& drift, const DiffusionFn& diffusion, double t, double dt,
                               std::span<const double> x, std::span<const double> dw) {
    if (x.size() != dw.size()) throw ShapeError("euler_step: state and increment lengths differ");
    if (!(dt > 0.0)) throw std::invalid_argument("euler_step: dt must be positive");
    std::vector<double> a(x.size()), out(x.size());
    drift(t, x, a);
    advance(x, a, dt, diffusion(t, x), dw, out);
    check_finite(out, t);
    return out;
}

PathBatch simulate_paths(const BsdeProblem& problem, const TimeGrid& grid, std::size_t batch_size,
                         const RngStream& stream, std::optional<std::size_t> through) {
    if (batch_size == 0) throw std::invalid_argument("simulate_paths: B must be >= 1");
    const std::size_t last = through.value_or(grid.steps());
    if (last > grid.steps()) throw std::out_of_range("simulate_paths: through beyond N");
    const std::size_t d = problem.dim();
    const double dt = grid.dt();
    const double sqrt_dt = std::sqrt(dt);

    PathBatch paths;
    paths.states.assign(last + 1, Matrix(batch_size, d));
    paths.increments.assign(last, Matrix(batch_size, d));

    // b(t_n) and a(t_n, .) are evaluated once per step when the drift is state independent.
    std::vector<Matrix> diffusions;
    diffusions.reserve(last);
    for (std::size_t n = 0; n < last; ++n) diffusions.push_back(problem.diffusion(grid.t(n)));
    std::vector<std::vector<double>> drifts;
    if (problem.drift_state_independent()) {
        for (std::size_t n = 0; n < last; ++n) {
            std::vector<double> a(d);
            problem.drift(grid.t(n), problem.x0(), a);
            drifts.push_back(std::move(a));
        }
    }

    std::vector<double> noise(last * d);
    std::vector<double> a(d);
    for (std::size_t j = 0; j < batch_size; ++j) {
        RngStream sample = stream.split(j);
        sample.fill_normals(noise);
        auto x = paths.states[0].row_span(j);
        std::copy(problem.x0().begin(), problem.x0().end(), x.begin());
        for (std::size_t n = 0; n < last; ++n) {
            auto dw = paths.increments[n].row_span(j);
            for (std::size_t k = 0; k < d; ++k) dw[k] = sqrt_dt * noise[n * d + k];
            const auto prev = paths.states[n].row_span(j);
            auto next = paths.states[n + 1].row_span(j);
            if (drifts.empty()) {
                problem.drift(grid.t(n), prev, a);
            } else {
                a = drifts[n];
            }
            advance(prev, a, dt, diffusions[n], dw, next);
            for (double v : next) {
                if (!std::isfinite(v)) {
                    throw NumericalBlowup("simulate_paths: non-finite state at step " + std::to_string(n + 1) +
                                          ", sample " + std::to_string(j));
                }
            }
        }
    }
    return paths;
}

MalliavinPair malliavin_step(const BsdeProblem& problem, const TimeGrid& grid, std::size_t n,
                             const PathBatch& paths) {
    if (n >= grid.steps()) throw std::out_of_range("malliavin_step: need n < N");
    const double t = grid.t(n);
    const double dt = grid.dt();
    const std::size_t d = problem.dim();
    MalliavinPair out;
    out.now = problem.diffusion(t);

    auto propagate = [&](std::span<const double> x) {
        Matrix m = problem.drift_jacobian(t, x);
        m *= dt;
        for (std::size_t k = 0; k < d; ++k) m(k, k) += 1.0;
        return matmul(m, out.now);
    };
    if (problem.drift_state_independent()) {
        out.next = propagate(problem.x0());
    } else {
        if (paths.last_step() < n) throw std::out_of_range("malliavin_step: paths do not reach step n");
        const Matrix& x = paths.states[n];
        out.next_per_sample.reserve(x.rows());
        for (std::size_t j = 0; j < x.rows(); ++j) out.next_per_sample.push_back(propagate(x.row_span(j)));
    }
    return out;
}

namespace {

NormalizationStats from_moments(const Moments& m) {
    NormalizationStats s{m.mean, m.stddev, false, false};
    for (double v : s.stddev) s.degenerate = s.degenerate || !(v > 0.0);
    return s;
}

}  // namespace

std::vector<NormalizationStats> normalization_table(const BsdeProblem& problem, const TimeGrid& grid,
                                                    const RngStream& fallback, std::size_t empirical_samples) {
    const std::size_t d = problem.dim();
    std::vector<NormalizationStats> table;
    if (problem.moments(0.0)) {
        for (std::size_t n = 0; n <= grid.steps(); ++n) table.push_back(from_moments(*problem.moments(grid.t(n))));
        return table;
    }
    if (empirical_samples < 2) throw std::invalid_argument("normalization_table: need at least two samples");

    // Welford accumulation, simulated in chunks so memory stays bounded.
    std::vector<std::vector<double>> mean(grid.steps() + 1, std::vector<double>(d, 0.0));
    std::vector<std::vector<double>> m2 = mean;
    std::size_t seen = 0;
    constexpr std::size_t kChunk = 2048;
    for (std::size_t start = 0; start < empirical_samples; start += kChunk) {
        const std::size_t count = std::min(kChunk, empirical_samples - start);
        const PathBatch chunk = simulate_paths(problem, grid, count, fallback.split(start / kChunk));
        for (std::size_t j = 0; j < count; ++j) {
            ++seen;
            for (std::size_t n = 0; n <= grid.steps(); ++n) {
                const auto x = chunk.states[n].row_span(j);
                for (std::size_t k = 0; k < d; ++k) {
                    const double delta = x[k] - mean[n][k];
                    mean[n][k] += delta / static_cast<double>(seen);
                    m2[n][k] += delta * (x[k] - mean[n][k]);
                }
            }
        }
    }
    for (std::size_t n = 0; n <= grid.steps(); ++n) {
        Moments m{mean[n], std::vector<double>(d)};
        for (std::size_t k = 0; k < d; ++k) m.stddev[k] = std::sqrt(m2[n][k] / static_cast<double>(seen - 1));
        NormalizationStats s = from_moments(m);
        if (n == 0) s.degenerate = true;
        s.empirical = true;
        table.push_back(std::move(s));
    }
    return table;
}

NormalizationStats normalization_stats(const BsdeProblem& problem, const TimeGrid& grid, std::size_t n,
                                       const RngStream& fallback) {
    if (n > grid.steps()) throw std::out_of_range("normalization_stats: n beyond N");
    if (const auto m = problem.moments(grid.t(n))) return from_moments(*m);
    return normalization_table(problem, grid, fallback)[n];
}

Matrix normalize_inputs(const Matrix& x, const NormalizationStats& stats) {
    if (stats.degenerate) return x;
    if (stats.mean.size() != x.cols() || stats.stddev.size() != x.cols())
        throw ShapeError("normalize_inputs: statistics do not match the input width");
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        const auto in = x.row_span(r);
        auto o = out.row_span(r);
        for (std::size_t k = 0; k < in.size(); ++k) o[k] = (in[k] - stats.mean[k]) / stats.stddev[k];
    }
    return out;
}

namespace {

void put_double(std::ostream& out, double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    out.write(buf, res.ptr - buf);
}

}  // namespace

void write_paths_csv(std::ostream& out, const PathBatch& paths, const TimeGrid& grid) {
    out << "sample,n,t";
    for (std::size_t k = 0; k < paths.dim(); ++k) out << ",X" << k + 1;
    out << '\n';
    for (std::size_t j = 0; j < paths.batch_size(); ++j) {
        for (std::size_t n = 0; n <= paths.last_step(); ++n) {
            out << j << ',' << n << ',';
            put_double(out, grid.t(n));
            for (double v : paths.states[n].row_span(j)) {
                out << ',';
                put_double(out, v);
            }
            out << '\n';
        }
    }
}

}  // namespace dlbdp
