// SPDX-License-Identifier: Apache-2.0

#include "laprox/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "laprox/error.hpp"

namespace laprox {

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
        throw ShapeError("Matrix: data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str());
    }
}

Matrix Matrix::identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        m(i, i) = 1.0;
    }
    return m;
}

Matrix Matrix::random_normal(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < rows * cols; ++i) {
        m.data_[i] = stddev * rng.normal();
    }
    return m;
}

void Matrix::append_row(std::span<const double> values) {
    if (cols_ == 0) {
        cols_ = values.size();
    }
    if (values.size() != cols_) {
        throw ShapeError("Matrix::append_row: row length " + std::to_string(values.size()) +
                         " does not match " + shape_str());
    }
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
}

bool Matrix::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Matrix::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul: incompatible shapes " + a.shape_str() + " * " + b.shape_str());
    }
    Matrix out(a.rows(), b.cols());
    const std::size_t n = a.cols();
    // i-k-j order keeps both b and out accesses sequential.
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto out_row = out.row(i);
        auto a_row = a.row(i);
        for (std::size_t k = 0; k < n; ++k) {
            const double aik = a_row[k];
            if (aik == 0.0) {
                continue;
            }
            auto b_row = b.row(k);
            for (std::size_t j = 0; j < b.cols(); ++j) {
                out_row[j] += aik * b_row[j];
            }
        }
    }
    return out;
}

Matrix transpose(const Matrix& m) {
    Matrix out(m.cols(), m.rows());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out(j, i) = m(i, j);
        }
    }
    return out;
}

namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_str() + " vs " +
                         b.shape_str());
    }
}

}  // namespace

Matrix add(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "add");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(i, j) = a(i, j) + b(i, j);
        }
    }
    return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
    require_same_shape(a, b, "subtract");
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < a.cols(); ++j) {
            out(i, j) = a(i, j) - b(i, j);
        }
    }
    return out;
}

Matrix scale(const Matrix& m, double factor) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out(i, j) = factor * m(i, j);
        }
    }
    return out;
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        double max_val = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            const double v = logits(i, j);
            if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
                throw ParameterError("softmax_rows: non-finite entry at row " +
                                     std::to_string(i) + " (only -inf masking is allowed)");
            }
            max_val = std::max(max_val, v);
        }
        if (max_val == -std::numeric_limits<double>::infinity()) {
            throw ParameterError("softmax_rows: row " + std::to_string(i) +
                                 " is fully masked; no valid attention target");
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            const double v = logits(i, j);
            const double e =
                (v == -std::numeric_limits<double>::infinity()) ? 0.0 : std::exp(v - max_val);
            out(i, j) = e;
            sum += e;
        }
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            out(i, j) /= sum;
        }
    }
    return out;
}

std::vector<double> col_l2_norms(const Matrix& m) {
    std::vector<double> acc(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            acc[j] += m(i, j) * m(i, j);
        }
    }
    for (double& v : acc) {
        v = std::sqrt(v);
    }
    return acc;
}

std::vector<double> row_l2_norms(const Matrix& m) {
    std::vector<double> out(m.rows(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        out[i] = l2_norm(m.row(i));
    }
    return out;
}

std::vector<double> avg_pool_1d(std::span<const double> scores, std::size_t kernel) {
    if (kernel == 0 || kernel % 2 == 0) {
        throw ParameterError("avg_pool_1d: kernel must be odd and >= 1, got " +
                             std::to_string(kernel));
    }
    const std::size_t n = scores.size();
    std::vector<double> out(n, 0.0);
    const std::size_t half = kernel / 2;
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t lo = i >= half ? i - half : 0;
        const std::size_t hi = std::min(n, i + half + 1);
        double sum = 0.0;
        for (std::size_t j = lo; j < hi; ++j) {
            sum += scores[j];
        }
        out[i] = sum / static_cast<double>(hi - lo);
    }
    return out;
}

double frobenius_norm(const Matrix& m) {
    double acc = 0.0;
    for (double v : m.data()) {
        acc += v * v;
    }
    return std::sqrt(acc);
}

double relative_frobenius_gap(const Matrix& a, const Matrix& b) {
    const double gap = frobenius_norm(subtract(a, b));
    const double ref = frobenius_norm(a);
    if (ref == 0.0) {
        return gap == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return gap / ref;
}

double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("dot: length mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

double l2_norm(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) {
        acc += x * x;
    }
    return std::sqrt(acc);
}

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    const double na = l2_norm(a);
    const double nb = l2_norm(b);
    if (na == 0.0 && nb == 0.0) {
        return 1.0;
    }
    if (na == 0.0 || nb == 0.0) {
        return 0.0;
    }
    return std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
}

}  // namespace laprox
