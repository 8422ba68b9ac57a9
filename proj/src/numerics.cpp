// SPDX-License-Identifier: Apache-2.0

#include "streammem/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "streammem/errors.hpp"

namespace streammem {

namespace {
constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;
} // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols, 0.0f) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) + " != " + std::to_string(rows_) +
                         "x" + std::to_string(cols_));
    }
}

Matrix Matrix::from_rows(const std::vector<std::vector<float>>& rows) {
    if (rows.empty()) {
        return {};
    }
    const std::size_t cols = rows.front().size();
    std::vector<float> data;
    data.reserve(rows.size() * cols);
    for (const auto& r : rows) {
        if (r.size() != cols) {
            throw ShapeError("ragged rows in Matrix::from_rows");
        }
        data.insert(data.end(), r.begin(), r.end());
    }
    return Matrix(rows.size(), cols, std::move(data));
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0f;
    }
    return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " times " +
                         std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
    }
    Matrix out(a.rows(), b.cols());
    std::vector<double> acc(b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            const auto brow = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                acc[j] += aik * brow[j];
            }
        }
        auto orow = out.row(i);
        for (std::size_t j = 0; j < b.cols(); ++j) {
            orow[j] = static_cast<float>(acc[j]);
        }
    }
    return out;
}

void softmax_inplace(std::span<double> logits) {
    if (logits.empty()) {
        return;
    }
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double& x : logits) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (double& x : logits) {
        x /= sum;
    }
}

Matrix softmax_rows(const Matrix& m) {
    if (m.empty()) {
        throw ShapeError("softmax_rows: empty matrix");
    }
    Matrix out(m.rows(), m.cols());
    std::vector<double> buf(m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto in = m.row(r);
        std::copy(in.begin(), in.end(), buf.begin());
        softmax_inplace(buf);
        auto o = out.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) {
            o[c] = static_cast<float>(buf[c]);
        }
    }
    return out;
}

double dot(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot: length mismatch");
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += static_cast<double>(a[i]) * b[i];
    }
    return s;
}

double l2_norm(std::span<const float> v) {
    double s = 0.0;
    for (float x : v) {
        s += static_cast<double>(x) * x;
    }
    return std::sqrt(s);
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) {
        throw ShapeError("cosine_similarity: length mismatch");
    }
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 || nb == 0.0) {
        throw DegenerateInputError("cosine_similarity: zero-norm vector");
    }
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

std::uint64_t splitmix64(std::uint64_t x) {
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
    std::uint64_t h = splitmix64(seed + kGoldenGamma);
    h = splitmix64(h ^ (a + kGoldenGamma));
    return splitmix64(h ^ (b + 2 * kGoldenGamma));
}

double counter_uniform(std::uint64_t seed, std::uint64_t counter) {
    const std::uint64_t bits = splitmix64(seed + (counter + 1) * kGoldenGamma);
    return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

float counter_normal(std::uint64_t seed, std::uint64_t counter) {
    double s = 0.0;
    for (std::uint64_t k = 0; k < 12; ++k) {
        s += counter_uniform(seed, counter * 12 + k);
    }
    return static_cast<float>(s - 6.0);
}

Matrix seeded_random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    if (rows == 0 || cols == 0) {
        throw ConfigError("seeded_random_matrix: dimensions must be positive");
    }
    Matrix m(rows, cols);
    auto d = m.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] = counter_normal(seed, i);
    }
    return m;
}

} // namespace streammem
