// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace laprox::selfcheck {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Head-wise decomposition identity: Concat(H^1..H^H) W_O == sum_h H^h W_O^h within
/// 1e-9 relative over 100 random configurations.
CheckResult check_head_decomposition(std::uint64_t seed);

/// Token contributions sum to the layer output at every query position, 1e-9 relative,
/// over 50 random layers.
CheckResult check_token_contribution(std::uint64_t seed);

/// Layer-wise normalization preserves every within-layer ranking exactly, over 100
/// random score tensors.
CheckResult check_normalization_ranking(std::uint64_t seed);

/// Every policy's plan meets its retained-count contract exactly and keeps all
/// observation-window indices, over 50 random configurations.
CheckResult check_budget_and_window(std::uint64_t seed);

/// Norm-product top-k beats the exhaustive-subset median in >= 99% of 500 random
/// column-row approximation instances, and a uniform-random subset in >= 95%.
CheckResult check_crs_oracle(std::uint64_t seed);

/// The planted-needle instance separates the policies deterministically: norm-product
/// scoring retains the needle, attention-mean scoring evicts it, and the norm-product
/// plan's approximation error is strictly lower.
CheckResult check_planted_needle();

/// Baseline reductions hold exactly: SLLM fixed indices, CAKE(gamma=0) == SnapKV,
/// CriticalKV(eps=0, unit value rows) == SnapKV, AdaKV(safeguard=1) == per-head top-k.
CheckResult check_baseline_conformance(std::uint64_t seed);

/// Runs every check above, printing one pass/fail line per check to `log`.
/// Returns all results; the run passes iff every result passed.
std::vector<CheckResult> run_selftest(std::uint64_t seed, std::ostream& log);

}  // namespace laprox::selfcheck
