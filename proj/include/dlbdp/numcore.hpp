#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dlbdp {

/// Raised when operand shapes do not conform.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Dense row-major matrix of doubles. Column vectors are d x 1, rows 1 x d.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
    Matrix(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix identity(std::size_t n);
    static Matrix diagonal(std::span<const double> diag);
    static Matrix row(std::span<const double> values);
    static Matrix column(std::span<const double> values);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }
    std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    bool is_diagonal() const;
    bool all_finite() const;

    Matrix& operator+=(const Matrix& other);
    Matrix& operator-=(const Matrix& other);
    Matrix& operator*=(double s);

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double s, Matrix a);

/// C = A * B.
Matrix matmul(const Matrix& a, const Matrix& b);
/// C = A * B^T.
Matrix matmul_nt(const Matrix& a, const Matrix& b);
/// C = A^T * B.
Matrix matmul_tn(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& a);
double frobenius_norm(const Matrix& a);
double frobenius_norm(std::span<const double> v);
double dot(std::span<const double> a, std::span<const double> b);

/// y = A x for a row-major A and contiguous x.
std::vector<double> matvec(const Matrix& a, std::span<const double> x);
/// y = x^T A, i.e. a row vector times a matrix.
std::vector<double> vecmat(std::span<const double> x, const Matrix& a);

/// Counter-based Gaussian stream (Philox4x32-10 + Box-Muller).
///
/// The key is the seed; the 128-bit counter is (counter, stream_id). Two streams
/// with the same (seed, stream_id, counter) produce the same numbers everywhere,
/// and every draw of n normals consumes ceil(n/2) blocks.
class RngStream {
public:
    RngStream() = default;
    RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t counter = 0)
        : seed_(seed), stream_id_(stream_id), counter_(counter) {}

    std::uint64_t seed() const noexcept { return seed_; }
    std::uint64_t stream_id() const noexcept { return stream_id_; }
    std::uint64_t counter() const noexcept { return counter_; }

    /// Substream keyed by an additional label; independent of the parent's counter.
    RngStream split(std::uint64_t label) const;

    void fill_normals(std::span<double> out);
    std::vector<double> normals(std::size_t count);
    /// Uniforms on the open interval (0, 1).
    void fill_uniforms(std::span<double> out);

    friend bool operator==(const RngStream&, const RngStream&) = default;

private:
    std::uint64_t seed_ = 0;
    std::uint64_t stream_id_ = 0;
    std::uint64_t counter_ = 0;
};

std::vector<double> sample_standard_normals(RngStream& stream, std::size_t count);

/// Raw Philox4x32-10 block, exposed for known-answer tests.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

/// SplitMix64 finaliser, used to derive stream ids from structured labels.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t stream_label(std::initializer_list<std::uint64_t> parts);

/// FNV-1a over raw bytes of doubles; used for determinism digests.
std::uint64_t digest(std::span<const double> values, std::uint64_t seed = 0xcbf29ce484222325ULL);

}  // namespace dlbdp
