// SPDX-License-Identifier: Apache-2.0
//
// Test-only reference implementations, deliberately written as the most naive possible
// computation so they stay independent of the library's code paths.

#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "laprox/matrix.hpp"

namespace oracles {

/// Plain i-j-k triple loop product.
inline laprox::Matrix naive_matmul(const laprox::Matrix& a, const laprox::Matrix& b) {
    laprox::Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                acc += a(i, k) * b(k, j);
            }
            out(i, j) = acc;
        }
    }
    return out;
}

/// Direct per-index window mean with edge clipping.
inline std::vector<double> naive_sliding_mean(const std::vector<double>& v,
                                              std::size_t kernel) {
    const std::size_t half = kernel / 2;
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double sum = 0.0;
        std::size_t count = 0;
        for (std::size_t j = (i >= half ? i - half : 0); j < std::min(v.size(), i + half + 1);
             ++j) {
            sum += v[j];
            ++count;
        }
        out[i] = sum / static_cast<double>(count);
    }
    return out;
}

/// All k-subsets of [0, n), lexicographic.
inline std::vector<std::vector<std::size_t>> all_subsets(std::size_t n, std::size_t k) {
    std::vector<std::vector<std::size_t>> subsets;
    std::vector<std::size_t> current(k);
    for (std::size_t i = 0; i < k; ++i) {
        current[i] = i;
    }
    while (true) {
        subsets.push_back(current);
        std::size_t i = k;
        while (i > 0 && current[i - 1] == n - k + i - 1) {
            --i;
        }
        if (i == 0) {
            break;
        }
        ++current[i - 1];
        for (std::size_t j = i; j < k; ++j) {
            current[j] = current[j - 1] + 1;
        }
    }
    return subsets;
}

}  // namespace oracles
