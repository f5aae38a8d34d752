#include <doctest.h>

#include "dlbdp/sde.hpp"
#include "toy_problems.hpp"

#include <cmath>
#include <sstream>

using namespace dlbdp;

namespace {

std::vector<double> vec(std::size_t d, double v) { return std::vector<double>(d, v); }

}  // namespace

TEST_CASE("time grid") {
    const TimeGrid g(1.0, 8);
    CHECK(g.dt() == 0.125);
    CHECK(g.t(0) == 0.0);
    CHECK(g.t(3) == 0.375);
    CHECK(g.t(8) == 1.0);
    for (std::size_t n = 0; n < 8; ++n) CHECK(g.t(n + 1) - g.t(n) == doctest::Approx(g.dt()).epsilon(1e-14));
    CHECK(TimeGrid(0.3, 3).t(3) == 0.3);
    CHECK_THROWS(TimeGrid(0.0, 4));
    CHECK_THROWS(TimeGrid(1.0, 0));
    CHECK_THROWS(g.t(9));
}

TEST_CASE("euler step examples") {
    const toy::LinearProblem still({3.0}, {0.0}, {0.0});
    CHECK(euler_step(still, 0.0, 0.5, std::vector<double>{3.0}, std::vector<double>{0.7})[0] == 3.0);

    const toy::LinearProblem unit_drift({2.0}, {1.0}, {0.0});
    CHECK(euler_step(unit_drift, 0.0, 0.5, std::vector<double>{2.0}, std::vector<double>{0.7})[0] == 2.5);

    const auto bs = make_black_scholes({.d = 1});
    const double x = euler_step(*bs, 0.0, 0.25, std::vector<double>{std::log(100.0)}, std::vector<double>{0.1})[0];
    CHECK(x == doctest::Approx(std::log(100.0) + 0.0075 + 0.02).epsilon(1e-15));

    CHECK_THROWS_AS(euler_step(*bs, 0.0, 0.0, std::vector<double>{0.0}, std::vector<double>{0.0}), std::invalid_argument);
    CHECK_THROWS_AS(euler_step(*bs, 0.0, 0.1, std::vector<double>{0.0, 1.0}, std::vector<double>{0.0}), ShapeError);

    const toy::LinearProblem huge({1e308}, {1e308}, {1.0});
    CHECK_THROWS_AS(euler_step(huge, 0.0, 10.0, std::vector<double>{1e308}, std::vector<double>{0.0}), NumericalBlowup);
}

TEST_CASE("simulate paths structure") {
    const toy::LinearProblem still({1.0, -2.0}, {0.0, 0.0}, {0.0, 0.0});
    const TimeGrid grid(1.0, 4);
    const auto paths = simulate_paths(still, grid, 5, RngStream(1, 2));
    CHECK(paths.states.size() == 5);
    CHECK(paths.increments.size() == 4);
    CHECK(paths.batch_size() == 5);
    for (const auto& s : paths.states)
        for (std::size_t j = 0; j < 5; ++j) {
            CHECK(s(j, 0) == 1.0);
            CHECK(s(j, 1) == -2.0);
        }
    CHECK_THROWS(simulate_paths(still, grid, 0, RngStream(1, 2)));
    CHECK_THROWS(simulate_paths(still, grid, 2, RngStream(1, 2), 5));
}

TEST_CASE("simulate paths determinism, order independence and prefixes") {
    const auto bs = make_black_scholes({.d = 3});
    const TimeGrid grid(1.0, 6);
    const RngStream stream(42, 7);
    const auto a = simulate_paths(*bs, grid, 16, stream);
    const auto b = simulate_paths(*bs, grid, 16, stream);
    CHECK(a.states == b.states);
    CHECK(a.increments == b.increments);

    const auto wide = simulate_paths(*bs, grid, 40, stream);
    for (std::size_t n = 0; n <= 6; ++n)
        for (std::size_t j = 0; j < 16; ++j)
            for (std::size_t k = 0; k < 3; ++k) CHECK(wide.states[n](j, k) == a.states[n](j, k));

    const auto prefix = simulate_paths(*bs, grid, 16, stream, 2);
    CHECK(prefix.last_step() == 2);
    for (std::size_t n = 0; n <= 2; ++n) CHECK(prefix.states[n] == a.states[n]);
    for (std::size_t n = 0; n < 2; ++n) CHECK(prefix.increments[n] == a.increments[n]);

    for (std::size_t j = 0; j < 16; ++j) CHECK(a.states[0](j, 2) == bs->x0()[2]);

    const auto other = simulate_paths(*bs, grid, 16, RngStream(43, 7));
    CHECK_FALSE(other.states.back() == a.states.back());
}

TEST_CASE("GBM terminal mean and increment moments") {
    const auto bs = make_black_scholes({.d = 1});
    const TimeGrid grid(1.0, 8);
    const std::size_t B = 100'000;
    const auto paths = simulate_paths(*bs, grid, B, RngStream(3, 3));

    double s = 0, s2 = 0;
    for (std::size_t j = 0; j < B; ++j) {
        const double x = paths.states.back()(j, 0);
        s += x, s2 += x * x;
    }
    const double mean = s / B, var = s2 / B - mean * mean;
    CHECK(std::abs(mean - (std::log(100.0) + 0.03)) < 3 * std::sqrt(var / B));

    const double dt = grid.dt();
    for (const auto& dw : paths.increments) {
        double m = 0, m2 = 0;
        for (double v : dw.data()) m += v, m2 += v * v;
        m /= B;
        const double sample_var = (m2 - B * m * m) / (B - 1);
        CHECK(std::abs(m) < 3 * std::sqrt(dt / B));
        CHECK(std::abs(sample_var - dt) < 3 * dt * std::sqrt(2.0 / (B - 1)));
    }
}

TEST_CASE("strong order of Euler on the original-domain GBM") {
    // dS = a S dt + b S dW against the exact terminal value with the same Brownian path.
    const double a = 0.05, b = 0.2, s0 = 100.0, T = 1.0;
    const DriftFn drift = [a](double, std::span<const double> x, std::span<double> out) { out[0] = a * x[0]; };
    const DiffusionFn diffusion = [b](double, std::span<const double> x) { return Matrix{{b * x[0]}}; };
    const std::size_t fine = 64, B = 20'000;
    std::vector<double> mse;
    for (std::size_t N : {8, 16, 32, 64}) {
        const std::size_t group = fine / N;
        double acc = 0.0;
        for (std::size_t j = 0; j < B; ++j) {
            RngStream rng = RngStream(11, 12).split(j);
            const auto z = rng.normals(fine);
            std::vector<double> x{s0};
            double w = 0.0;
            for (std::size_t n = 0; n < N; ++n) {
                double dw = 0.0;
                for (std::size_t i = 0; i < group; ++i) dw += std::sqrt(T / fine) * z[n * group + i];
                w += dw;
                x = euler_step(drift, diffusion, n * T / N, T / N, x, std::vector<double>{dw});
            }
            const double exact = s0 * std::exp((a - 0.5 * b * b) * T + b * w);
            acc += (x[0] - exact) * (x[0] - exact);
        }
        mse.push_back(acc / B);
    }
    for (std::size_t i = 0; i + 1 < mse.size(); ++i) {
        const double ratio = mse[i] / mse[i + 1];
        CHECK(ratio > 2.0 * 0.8);
        CHECK(ratio < 2.0 * 1.2);
    }
}

TEST_CASE("ln-domain Euler is exact for constant coefficients") {
    const auto bs = make_black_scholes({.d = 1});
    const TimeGrid grid(1.0, 16);
    const auto paths = simulate_paths(*bs, grid, 1000, RngStream(5, 5));
    for (std::size_t j = 0; j < 1000; ++j) {
        double w = 0.0;
        for (const auto& dw : paths.increments) w += dw(j, 0);
        const double exact = std::log(100.0) + 0.03 + 0.2 * w;
        CHECK(std::abs(paths.states.back()(j, 0) - exact) < 1e-12);
    }
}

TEST_CASE("malliavin step examples") {
    const auto bs = make_black_scholes({.d = 1});
    const TimeGrid grid(1.0, 4);
    const auto paths = simulate_paths(*bs, grid, 3, RngStream(1, 1));
    const auto m = malliavin_step(*bs, grid, 2, paths);
    CHECK(m.now(0, 0) == 0.2);
    CHECK(m.next(0, 0) == 0.2);
    CHECK(m.next_per_sample.empty());

    const double c = -0.7;
    const toy::LinearProblem ou({1.0, 2.0}, {0.1, 0.0}, {0.3, 0.5}, c);
    const auto ou_paths = simulate_paths(ou, grid, 4, RngStream(2, 2));
    const auto mo = malliavin_step(ou, grid, 1, ou_paths);
    REQUIRE(mo.next_per_sample.size() == 4);
    for (std::size_t j = 0; j < 4; ++j) {
        CHECK(mo.next_for(j)(0, 0) == doctest::Approx((1 + c * 0.25) * 0.3).epsilon(1e-15));
        CHECK(mo.next_for(j)(1, 1) == doctest::Approx((1 + c * 0.25) * 0.5).epsilon(1e-15));
        CHECK(mo.next_for(j)(0, 1) == 0.0);
    }

    const auto two = make_black_scholes({.d = 2, .vol = {0.2, 0.3}});
    const auto m2 = malliavin_step(*two, grid, 0, simulate_paths(*two, grid, 2, RngStream(1, 1)));
    const Matrix expected = Matrix::diagonal(std::vector<double>{0.2, 0.3});
    CHECK(m2.now == expected);
    CHECK(m2.next == expected);
    CHECK_THROWS(malliavin_step(*two, grid, 4, paths));
}

TEST_CASE("malliavin constancy for every benchmark") {
    const std::vector<ProblemPtr> problems{
        make_black_scholes({.d = 4}), make_different_rates({.d = 3, .payoff = RatesPayoff::max_call_spread}),
        make_hjb({.d = 3}), make_local_vol({.d = 3})};
    for (const auto& p : problems) {
        const TimeGrid grid(p->terminal_time(), 5);
        const auto paths = simulate_paths(*p, grid, 2, RngStream(1, 1));
        for (std::size_t n = 0; n < 5; ++n) {
            const auto m = malliavin_step(*p, grid, n, paths);
            CHECK(m.next == p->diffusion(grid.t(n)));
            CHECK(m.now == p->diffusion(grid.t(n)));
        }
    }
}

TEST_CASE("normalization statistics") {
    const auto bs = make_black_scholes({.d = 2});
    const TimeGrid grid(1.0, 4);
    const auto s0 = normalization_stats(*bs, grid, 0, RngStream(1, 1));
    CHECK(s0.degenerate);
    CHECK(s0.mean[1] == std::log(100.0));
    CHECK(s0.stddev[0] == 0.0);

    const auto s2 = normalization_stats(*bs, grid, 2, RngStream(1, 1));
    CHECK_FALSE(s2.degenerate);
    CHECK_FALSE(s2.empirical);
    CHECK(s2.mean[0] == doctest::Approx(std::log(100.0) + 0.03 * 0.5));
    CHECK(s2.stddev[0] == doctest::Approx(0.2 * std::sqrt(0.5)));

    const auto hjb = make_hjb({.d = 3});
    const TimeGrid hgrid(0.5, 5);
    const auto sh = normalization_stats(*hjb, hgrid, 5, RngStream(1, 1));
    CHECK(sh.mean[2] == 1.0);
    CHECK(sh.stddev[2] == doctest::Approx(std::sqrt(0.2) * std::sqrt(0.5)));

    // Without analytic moments the pre-simulation estimates them.
    const toy::LinearProblem opaque({1.0}, {0.5}, {0.4}, 0.0, 1.0, false);
    const auto table = normalization_table(opaque, grid, RngStream(9, 9));
    REQUIRE(table.size() == 5);
    CHECK(table[0].degenerate);
    CHECK(table[3].empirical);
    const double se_mean = 0.4 * std::sqrt(0.75 / 1e5);
    CHECK(std::abs(table[3].mean[0] - (1.0 + 0.5 * 0.75)) < 4 * se_mean);
    CHECK(std::abs(table[3].stddev[0] - 0.4 * std::sqrt(0.75)) < 4 * 0.4 * std::sqrt(0.75) / std::sqrt(2e5));

    const Matrix x{{1.0, 2.0}, {3.0, 4.0}};
    CHECK(normalize_inputs(x, s0) == x);
    NormalizationStats st{{1.0, 2.0}, {2.0, 4.0}, false, false};
    CHECK(normalize_inputs(x, st) == Matrix{{0.0, 0.0}, {1.0, 0.5}});
}

TEST_CASE("paths csv") {
    const auto hjb = make_hjb({.d = 2});
    const TimeGrid grid(0.5, 2);
    const auto paths = simulate_paths(*hjb, grid, 3, RngStream(1, 1));
    std::ostringstream out;
    write_paths_csv(out, paths, grid);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "sample,n,t,X1,X2");
    std::getline(in, line);
    CHECK(line == "0,0,0,1,1");
    std::size_t rows = 1;
    while (std::getline(in, line)) ++rows;
    CHECK(rows == 9);
}
