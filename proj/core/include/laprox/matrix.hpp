// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "laprox/rng.hpp"

namespace laprox {

/**
 * @brief Dense row-major matrix of 64-bit floats; the universal numeric carrier.
 *
 * Treated as immutable once filled: every operation below takes const references and
 * returns a fresh matrix, so matrices can be shared read-only across workers.
 */
class Matrix {
public:
    Matrix() = default;

    /// Zero-filled rows x cols matrix.
    Matrix(std::size_t rows, std::size_t cols);

    /// Takes ownership of row-major data; throws ShapeError unless data.size() == rows*cols.
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

    static Matrix identity(std::size_t n);

    /// Entries drawn i.i.d. from N(0, stddev^2); consumes 'rows*cols' normal draws in
    /// row-major order, so layouts are reproducible per seed.
    static Matrix random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    bool empty() const { return data_.empty(); }

    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

    std::span<const double> row(std::size_t r) const {
        return {data_.data() + r * cols_, cols_};
    }
    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

    const std::vector<double>& data() const { return data_; }

    /// Appends one row (used for decode-time cache growth). Length must equal cols.
    void append_row(std::span<const double> values);

    bool all_finite() const;

    /// "rows x cols" rendering for diagnostics.
    std::string shape_str() const;

    bool operator==(const Matrix& other) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Standard product; throws ShapeError naming both operand shapes on mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double factor);

/**
 * @brief Row-wise softmax with -inf treated as a mask sentinel.
 *
 * Each output row is nonnegative and sums to 1 (within 1e-12); masked positions are
 * exactly 0. Uses per-row max subtraction for stability. A fully masked row, or any
 * NaN/+inf entry, throws ParameterError.
 */
Matrix softmax_rows(const Matrix& logits);

/// Euclidean norm of each column.
std::vector<double> col_l2_norms(const Matrix& m);

/// Euclidean norm of each row.
std::vector<double> row_l2_norms(const Matrix& m);

/**
 * @brief 1-D average pooling with an odd kernel and shrinking windows at the edges.
 *
 * Entry i is the mean of entries in [i-k/2, i+k/2] clipped to the vector bounds, so the
 * output has the same length as the input and kernel==1 is the identity. An even or zero
 * kernel throws ParameterError.
 */
std::vector<double> avg_pool_1d(std::span<const double> scores, std::size_t kernel);

double frobenius_norm(const Matrix& m);

/// ||a - b||_F / ||a||_F, with 0/0 defined as 0.
double relative_frobenius_gap(const Matrix& a, const Matrix& b);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> v);

/// Cosine similarity in [-1, 1]; 1 when both vectors are zero, 0 when exactly one is.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

}  // namespace laprox
