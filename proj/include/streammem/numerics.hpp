// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace streammem {

/// Dense row-major matrix of 32-bit floats.
///
/// Storage is single precision; every reduction in this header accumulates
/// in double and rounds once on the way out.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols);
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

    /// Builds a matrix from nested rows; all rows must have equal length.
    static Matrix from_rows(const std::vector<std::vector<float>>& rows);
    static Matrix identity(std::size_t n);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return rows_ == 0 || cols_ == 0; }

    float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<float> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const float> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    std::span<const float> data() const { return data_; }
    std::span<float> data() { return data_; }

    bool operator==(const Matrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> data_;
};

/// a × b. Throws ShapeError when a.cols() != b.rows().
Matrix matmul(const Matrix& a, const Matrix& b);

/// Row-wise softmax with per-row max subtraction. Throws ShapeError on empty input.
Matrix softmax_rows(const Matrix& m);

/// In-place softmax of one row of logits held in double precision.
void softmax_inplace(std::span<double> logits);

double dot(std::span<const float> a, std::span<const float> b);
double l2_norm(std::span<const float> v);

/// dot(a,b) / (|a| |b|), clamped to [-1, 1].
/// Throws ShapeError on length mismatch and DegenerateInputError on a zero-norm input.
double cosine_similarity(std::span<const float> a, std::span<const float> b);

/// SplitMix64 finalizer. Used both as the PRNG output function and to derive
/// independent sub-seeds from a parent seed.
std::uint64_t splitmix64(std::uint64_t x);

/// Derives a child seed from (seed, a, b). Distinct tuples give unrelated streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

/// Uniform double in [0, 1) from the counter-based generator: the top 53 bits
/// of splitmix64(seed + (counter + 1) * golden_gamma).
double counter_uniform(std::uint64_t seed, std::uint64_t counter);

/// Approximately standard-normal sample: Irwin-Hall sum of 12 counter_uniform
/// draws minus 6. Only additions are involved, so results are bit-identical on
/// every IEEE-754 platform.
float counter_normal(std::uint64_t seed, std::uint64_t counter);

/// rows × cols matrix filled with counter_normal(seed, i) for i in row-major order.
/// Throws ConfigError if either dimension is zero.
Matrix seeded_random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed);

} // namespace streammem
