// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <limits>

#include "laprox/error.hpp"
#include "laprox/matrix.hpp"
#include "oracles.hpp"

using namespace laprox;

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

TEST_CASE("matmul identity leaves any matrix unchanged") {
    Rng rng(1);
    const Matrix m = Matrix::random_normal(3, 3, 1.0, rng);
    CHECK(matmul(Matrix::identity(3), m) == m);
}

TEST_CASE("matmul matches hand arithmetic and the naive oracle") {
    const Matrix a(2, 2, {1, 2, 3, 4});
    const Matrix b(2, 1, {5, 6});
    const Matrix product = matmul(a, b);
    CHECK(product(0, 0) == 17.0);
    CHECK(product(1, 0) == 39.0);
    CHECK(product == oracles::naive_matmul(a, b));
}

TEST_CASE("matmul with a zero matrix annihilates") {
    Rng rng(2);
    const Matrix m = Matrix::random_normal(3, 4, 1.0, rng);
    const Matrix zero(4, 2);
    CHECK(frobenius_norm(matmul(m, zero)) == 0.0);
}

TEST_CASE("matmul shape error names both operand shapes") {
    const Matrix a(2, 3);
    const Matrix b(4, 2);
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("2x3"), ShapeError);
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("4x2"), ShapeError);
}

TEST_CASE("matmul agrees with the naive oracle on random shapes") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t m = 1 + rng.uniform_index(6);
        const std::size_t n = 1 + rng.uniform_index(6);
        const std::size_t p = 1 + rng.uniform_index(6);
        const Matrix a = Matrix::random_normal(m, n, 1.0, rng);
        const Matrix b = Matrix::random_normal(n, p, 1.0, rng);
        CHECK(relative_frobenius_gap(oracles::naive_matmul(a, b), matmul(a, b)) < 1e-14);
    }
}

TEST_CASE("matmul is associative within 1e-9 relative error") {
    Rng rng(4);
    for (int trial = 0; trial < 25; ++trial) {
        const Matrix a = Matrix::random_normal(5, 7, 1.0, rng);
        const Matrix b = Matrix::random_normal(7, 6, 1.0, rng);
        const Matrix c = Matrix::random_normal(6, 4, 1.0, rng);
        const Matrix left = matmul(matmul(a, b), c);
        const Matrix right = matmul(a, matmul(b, c));
        CHECK(relative_frobenius_gap(left, right) < 1e-9);
    }
}

TEST_CASE("softmax_rows handles the documented examples") {
    SUBCASE("uniform logits") {
        const Matrix uniform = softmax_rows(Matrix(1, 3, {0, 0, 0}));
        for (std::size_t j = 0; j < 3; ++j) {
            CHECK(uniform(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
        }
    }
    SUBCASE("log-ratio logits") {
        const Matrix quarters = softmax_rows(Matrix(1, 2, {0.0, std::log(3.0)}));
        CHECK(quarters(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(quarters(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
    }
    SUBCASE("single element") {
        CHECK(softmax_rows(Matrix(1, 1, {5.0}))(0, 0) == 1.0);
    }
}

TEST_CASE("softmax_rows masks -inf to exactly zero") {
    const Matrix out = softmax_rows(Matrix(1, 3, {1.0, -kInf, 2.0}));
    CHECK(out(0, 1) == 0.0);
    CHECK(out(0, 0) + out(0, 2) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax_rows rejects fully masked rows and non-finite entries") {
    CHECK_THROWS_AS(softmax_rows(Matrix(1, 2, {-kInf, -kInf})), ParameterError);
    CHECK_THROWS_AS(softmax_rows(Matrix(1, 2, {1.0, kInf})), ParameterError);
    CHECK_THROWS_AS(softmax_rows(Matrix(1, 2, {1.0, std::nan("")})), ParameterError);
}

TEST_CASE("softmax_rows rows sum to one for wide-range random logits") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix logits(4, 32);
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t j = 0; j < 32; ++j) {
                logits(i, j) = rng.uniform(-50.0, 50.0);
            }
        }
        const Matrix out = softmax_rows(logits);
        for (std::size_t i = 0; i < 4; ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < 32; ++j) {
                CHECK(out(i, j) >= 0.0);
                sum += out(i, j);
            }
            CHECK(std::abs(sum - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("column and row norms") {
    CHECK(col_l2_norms(Matrix::identity(3)) == std::vector<double>{1, 1, 1});
    CHECK(col_l2_norms(Matrix(2, 1, {3, 4})) == std::vector<double>{5});
    CHECK(col_l2_norms(Matrix(2, 2)) == std::vector<double>{0, 0});
    CHECK(row_l2_norms(Matrix::identity(3)) == std::vector<double>{1, 1, 1});
    CHECK(row_l2_norms(Matrix(1, 2, {3, 4})) == std::vector<double>{5});
    const Matrix with_zero_row(3, 2, {1, 1, 0, 0, 2, 2});
    CHECK(row_l2_norms(with_zero_row)[1] == 0.0);
}

TEST_CASE("col norms equal row norms of the transpose exactly") {
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        const Matrix m = Matrix::random_normal(5, 7, 2.0, rng);
        CHECK(col_l2_norms(m) == row_l2_norms(transpose(m)));
    }
}

TEST_CASE("avg_pool_1d examples") {
    const std::vector<double> v{0, 3, 0};
    CHECK(avg_pool_1d(v, 1) == v);
    CHECK(avg_pool_1d(v, 3) == std::vector<double>{1.5, 1.0, 1.5});
    const std::vector<double> constant(9, 2.5);
    CHECK(avg_pool_1d(constant, 7) == constant);
    CHECK_THROWS_AS(avg_pool_1d(v, 2), ParameterError);
    CHECK_THROWS_AS(avg_pool_1d(v, 0), ParameterError);
}

TEST_CASE("avg_pool_1d matches the sliding-window oracle on random vectors") {
    Rng rng(7);
    for (int trial = 0; trial < 1000; ++trial) {
        std::vector<double> v(1 + rng.uniform_index(40));
        for (auto& x : v) {
            x = rng.uniform(-5.0, 5.0);
        }
        for (std::size_t kernel : {1, 3, 7}) {
            const auto pooled = avg_pool_1d(v, kernel);
            const auto expected = oracles::naive_sliding_mean(v, kernel);
            REQUIRE(pooled.size() == expected.size());
            for (std::size_t i = 0; i < v.size(); ++i) {
                CHECK(pooled[i] == doctest::Approx(expected[i]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("matrix data length must match its shape") {
    CHECK_THROWS_AS(Matrix(2, 2, {1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("cosine similarity endpoints") {
    const std::vector<double> a{1, 0};
    const std::vector<double> b{0, 1};
    const std::vector<double> zero{0, 0};
    CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
    CHECK(cosine_similarity(a, b) == doctest::Approx(0.0));
    CHECK(cosine_similarity(zero, zero) == 1.0);
    CHECK(cosine_similarity(a, zero) == 0.0);
}
