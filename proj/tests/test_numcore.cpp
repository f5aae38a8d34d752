#include <doctest.h>

#include "dlbdp/numcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace dlbdp;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, RngStream& rng) {
    return Matrix(r, c, rng.normals(r * c));
}

Matrix triple_loop(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i)
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
            c(i, j) = s;
        }
    return c;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
    return m;
}

}  // namespace

TEST_CASE("matmul small cases") {
    const Matrix m{{1, 2}, {3, 4}};
    CHECK(matmul(Matrix::identity(2), m) == m);
    CHECK(matmul(Matrix{{1, 2}}, Matrix{{3}, {4}}) == Matrix{{11}});
    CHECK_THROWS_AS(matmul(Matrix(2, 3), Matrix(2, 3)), ShapeError);
}

TEST_CASE("matmul agrees with triple loop") {
    RngStream rng(7, 1);
    const Matrix a = random_matrix(5, 7, rng);
    const Matrix b = random_matrix(7, 3, rng);
    CHECK(max_abs_diff(matmul(a, b), triple_loop(a, b)) < 1e-12);
    CHECK(max_abs_diff(matmul_nt(a, transpose(b)), triple_loop(a, b)) < 1e-12);
    CHECK(max_abs_diff(matmul_tn(transpose(a), b), triple_loop(a, b)) < 1e-12);
}

TEST_CASE("matmul associativity and transpose involution") {
    RngStream rng(11, 2);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix a = random_matrix(4, 6, rng);
        const Matrix b = random_matrix(6, 5, rng);
        const Matrix c = random_matrix(5, 3, rng);
        const Matrix left = matmul(matmul(a, b), c);
        const Matrix right = matmul(a, matmul(b, c));
        CHECK(frobenius_norm(left - right) / frobenius_norm(left) < 1e-10);
        CHECK(transpose(transpose(a)) == a);
    }
}

TEST_CASE("frobenius norm") {
    CHECK(frobenius_norm(Matrix(3, 2)) == 0.0);
    CHECK(frobenius_norm(Matrix{{3, 4}}) == doctest::Approx(5.0));
    CHECK(frobenius_norm(Matrix{{1, 1}, {1, 1}}) == doctest::Approx(2.0));
}

TEST_CASE("philox known-answer vectors") {
    using A4 = std::array<std::uint32_t, 4>;
    CHECK(philox4x32_10({0, 0, 0, 0}, {0, 0}) == A4{0x6627e8d5u, 0xe169c58du, 0xbc57ac4cu, 0x9b00dbd8u});
    CHECK(philox4x32_10({0xffffffffu, 0xffffffffu, 0xffffffffu, 0xffffffffu}, {0xffffffffu, 0xffffffffu}) ==
          A4{0x408f276du, 0x41c83b0eu, 0xa20bc7c6u, 0x6d5451fdu});
    CHECK(philox4x32_10({0x243f6a88u, 0x85a308d3u, 0x13198a2eu, 0x03707344u}, {0xa4093822u, 0x299f31d0u}) ==
          A4{0xd16cfe09u, 0x94fdccebu, 0x5001e420u, 0x24126ea1u});
}

TEST_CASE("normal stream determinism and counters") {
    RngStream s(42, 3);
    CHECK(sample_standard_normals(s, 0).empty());
    CHECK(s.counter() == 0);

    RngStream a(42, 3, 5);
    RngStream b(42, 3, 5);
    CHECK(a.normals(17) == b.normals(17));
    CHECK(a.counter() == 5 + 9);

    RngStream c(42, 4, 5);
    RngStream d(42, 3, 5);
    CHECK(c.normals(4) != d.normals(4));
}

TEST_CASE("normal moments over 1e6 samples") {
    RngStream s(2024, 9);
    const auto z = s.normals(1'000'000);
    const double n = static_cast<double>(z.size());
    const double mean = std::accumulate(z.begin(), z.end(), 0.0) / n;
    double m2 = 0.0, m4 = 0.0;
    for (double v : z) {
        m2 += (v - mean) * (v - mean);
        m4 += v * v * v * v;
    }
    m2 /= n;
    m4 /= n;
    CHECK(std::abs(mean) < 4e-3);
    CHECK(std::abs(m2 - 1.0) < 1e-2);
    // Var(Z^4) = E Z^8 - 9 = 96.
    CHECK(std::abs(m4 - 3.0) < 3.0 * std::sqrt(96.0 / n));
}

TEST_CASE("Kolmogorov-Smirnov against the standard normal CDF") {
    RngStream s(5, 77);
    auto z = s.normals(100'000);
    std::sort(z.begin(), z.end());
    const double n = static_cast<double>(z.size());
    double stat = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double cdf = 0.5 * std::erfc(-z[i] / std::sqrt(2.0));
        stat = std::max({stat, (i + 1) / n - cdf, cdf - i / n});
    }
    CHECK(stat < 1.628 / std::sqrt(n));
}

TEST_CASE("split substreams are label dependent") {
    const RngStream root(1, 0);
    auto a = root.split(10);
    auto b = root.split(10);
    auto c = root.split(11);
    CHECK(a.normals(3) == b.normals(3));
    CHECK(root.split(10).normals(3) != c.normals(3));
}
