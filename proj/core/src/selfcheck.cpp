// SPDX-License-Identifier: Apache-2.0

#include "laprox/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>

#include "laprox/attention.hpp"
#include "laprox/eval.hpp"
#include "laprox/kv_cache.hpp"
#include "laprox/scoring.hpp"
#include "laprox/selection.hpp"

namespace laprox::selfcheck {

namespace {

std::string fmt(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

/// Within-layer ranking of the flattened (head, token) non-sentinel scores with the
/// deterministic (value desc, index asc) order used everywhere in selection.
template <typename Tensor>
std::vector<std::size_t> layer_ranking(const Tensor& tensor, std::size_t layer) {
    std::vector<std::size_t> flat_ids;
    std::vector<double> flat_scores;
    for (std::size_t h = 0; h < tensor.heads; ++h) {
        for (std::size_t t = 0; t < tensor.tokens; ++t) {
            if (tensor.is_window[t] == 0) {
                flat_ids.push_back(h * tensor.tokens + t);
                flat_scores.push_back(tensor.scores[layer][h][t]);
            }
        }
    }
    std::vector<std::size_t> order(flat_ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (flat_scores[a] != flat_scores[b]) {
            return flat_scores[a] > flat_scores[b];
        }
        return flat_ids[a] < flat_ids[b];
    });
    std::vector<std::size_t> ranked(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        ranked[i] = flat_ids[order[i]];
    }
    return ranked;
}

}  // namespace

CheckResult check_head_decomposition(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t head_choices[] = {1, 2, 4, 8};
    const std::size_t seq_choices[] = {8, 64};
    const std::size_t dim_choices[] = {4, 16};
    double worst = 0.0;
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t heads = head_choices[rng.uniform_index(4)];
        const std::size_t seq = seq_choices[rng.uniform_index(2)];
        const std::size_t dim = dim_choices[rng.uniform_index(2)];
        const AttentionStack stack = build_stack(1, heads, heads, dim, rng);
        const Matrix x = Matrix::random_normal(seq, stack.model_dim(), 1.0, rng);
        const PrefillResult res = prefill_layer(stack, 0, x);
        worst = std::max(worst, head_decomposition_residual(res.acts, stack, 0));
    }
    return {"head decomposition identity", worst <= 1e-9,
            "max relative residual " + fmt(worst) + " over 100 configs (tolerance 1e-9)"};
}

CheckResult check_token_contribution(std::uint64_t seed) {
    Rng rng(seed);
    const std::size_t head_choices[] = {1, 2, 4};
    const std::size_t dim_choices[] = {4, 8, 16};
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t heads = head_choices[rng.uniform_index(3)];
        const std::size_t kv_heads = trial % 2 == 0 ? heads : std::max<std::size_t>(1, heads / 2);
        const std::size_t dim = dim_choices[rng.uniform_index(3)];
        const std::size_t seq = 4 + rng.uniform_index(17);
        const AttentionStack stack = build_stack(1, heads, kv_heads, dim, rng);
        const Matrix x = Matrix::random_normal(seq, stack.model_dim(), 1.0, rng);
        const PrefillResult res = prefill_layer(stack, 0, x);
        for (std::size_t i = 0; i < seq; ++i) {
            Matrix sum(1, stack.model_dim());
            for (std::size_t j = 0; j <= i; ++j) {
                sum = add(sum, token_contribution(res.acts, stack, 0, i, j));
            }
            Matrix expected(1, stack.model_dim());
            for (std::size_t c = 0; c < stack.model_dim(); ++c) {
                expected(0, c) = res.acts.output(i, c);
            }
            worst = std::max(worst, relative_frobenius_gap(expected, sum));
        }
    }
    return {"token contribution completeness", worst <= 1e-9,
            "max relative gap " + fmt(worst) + " over 50 layers (tolerance 1e-9)"};
}

CheckResult check_normalization_ranking(std::uint64_t seed) {
    Rng rng(seed);
    for (int trial = 0; trial < 100; ++trial) {
        ScoreTensor tensor;
        tensor.layers = 1 + rng.uniform_index(4);
        tensor.heads = 1 + rng.uniform_index(4);
        tensor.tokens = 8 + rng.uniform_index(33);
        const std::size_t window = 1 + rng.uniform_index(tensor.tokens - 2);
        tensor.is_window.assign(tensor.tokens, 0);
        for (std::size_t t = tensor.tokens - window; t < tensor.tokens; ++t) {
            tensor.is_window[t] = 1;
        }
        tensor.scores.resize(tensor.layers);
        for (std::size_t l = 0; l < tensor.layers; ++l) {
            // Wildly different scales per layer; normalization must not disturb order.
            const double scale = std::pow(10.0, static_cast<double>(l) * 2.0);
            tensor.scores[l].resize(tensor.heads);
            for (auto& head : tensor.scores[l]) {
                head.resize(tensor.tokens);
                for (auto& v : head) {
                    v = scale * rng.uniform(1e-3, 10.0);
                }
            }
        }
        const NormalizedScores normalized = normalize_layer_scores(tensor);
        for (std::size_t l = 0; l < tensor.layers; ++l) {
            if (layer_ranking(tensor, l) != layer_ranking(normalized, l)) {
                return {"normalization ranking preservation", false,
                        "ranking changed at trial " + std::to_string(trial) + " layer " +
                            std::to_string(l)};
            }
        }
    }
    return {"normalization ranking preservation", true,
            "argsort identical before/after on 100 random score tensors"};
}

CheckResult check_budget_and_window(std::uint64_t seed) {
    Rng rng(seed);
    const Policy policies[] = {Policy::kLaprox, Policy::kSllm,       Policy::kSnapKv,
                               Policy::kCake,   Policy::kAdaKv,      Policy::kCriticalKv};
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t heads = std::size_t{1} << rng.uniform_index(3);  // 1, 2, 4
        const std::size_t kv_heads = trial % 3 == 0 && heads > 1 ? heads / 2 : heads;
        const std::size_t layers = 1 + rng.uniform_index(3);
        const std::size_t dim = 4 + 4 * rng.uniform_index(2);
        const std::size_t window = 4 + 4 * rng.uniform_index(2);

        PolicyConfig cfg;
        cfg.window = window;
        const std::size_t budget = window + cfg.sink_tokens + 1 + rng.uniform_index(8);
        const std::size_t seq = budget + 1 + rng.uniform_index(16);

        Rng stack_rng(Rng::derive(seed, static_cast<std::uint64_t>(trial) + 1000));
        const AttentionStack stack = build_stack(layers, heads, kv_heads, dim, stack_rng);
        const Matrix x = Matrix::random_normal(seq, stack.model_dim(), 1.0, stack_rng);
        const auto prefill = prefill_stack(stack, x);

        for (Policy policy : policies) {
            cfg.policy = policy;
            const SelectionPlan plan =
                build_plan(stack, prefill, cfg, BudgetSpec{budget}, nullptr);
            validate_plan(plan);
            const std::size_t contract = budget * heads * layers;
            if (plan.total_retained() != contract) {
                return {"budget exactness and window safety", false,
                        to_string(policy) + " retained " +
                            std::to_string(plan.total_retained()) + " of " +
                            std::to_string(contract) + " at trial " + std::to_string(trial)};
            }
            if (!plan_includes_window(plan, window)) {
                return {"budget exactness and window safety", false,
                        to_string(policy) + " dropped a window token at trial " +
                            std::to_string(trial)};
            }
        }
    }
    return {"budget exactness and window safety", true,
            "all 6 policies met their contracts on 50 random configs"};
}

CheckResult check_crs_oracle(std::uint64_t seed) {
    Rng rng(seed);
    const int trials = 500;
    int beat_median = 0;
    int beat_random = 0;
    for (int trial = 0; trial < trials; ++trial) {
        const std::size_t n = 6 + rng.uniform_index(5);
        const std::size_t k = 1 + rng.uniform_index(3);
        const std::size_t m = 8 + rng.uniform_index(9);
        const std::size_t p = 8 + rng.uniform_index(9);
        // Column-row pairs with log-normal magnitude spread, the regime norm-product
        // selection is about; homogeneous pairs leave nothing to select.
        Matrix a = Matrix::random_normal(m, n, 1.0, rng);
        Matrix b = Matrix::random_normal(n, p, 1.0, rng);
        for (std::size_t i = 0; i < n; ++i) {
            const double col_scale = std::exp(rng.normal());
            const double row_scale = std::exp(rng.normal());
            for (std::size_t r = 0; r < m; ++r) {
                a(r, i) *= col_scale;
            }
            for (std::size_t c = 0; c < p; ++c) {
                b(i, c) *= row_scale;
            }
        }

        const CrsRanking ranking = crs_rank_indices(a, b);
        std::vector<std::size_t> top(ranking.order.begin(),
                                     ranking.order.begin() + static_cast<std::ptrdiff_t>(k));
        std::sort(top.begin(), top.end());
        const double chosen_err = crs_error(a, b, top);

        // Exhaustive enumeration of all C(n, k) subsets.
        std::vector<double> errors;
        std::vector<std::size_t> subset(k);
        std::vector<bool> mask(n, false);
        std::fill(mask.begin(), mask.begin() + static_cast<std::ptrdiff_t>(k), true);
        std::sort(mask.begin(), mask.end());  // lexicographic combinations via permutations
        do {
            std::size_t idx = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (mask[i]) {
                    subset[idx++] = i;
                }
            }
            errors.push_back(crs_error(a, b, subset));
        } while (std::next_permutation(mask.begin(), mask.end()));
        std::sort(errors.begin(), errors.end());
        const double median = errors.size() % 2 == 1
                                  ? errors[errors.size() / 2]
                                  : 0.5 * (errors[errors.size() / 2 - 1] +
                                           errors[errors.size() / 2]);
        if (chosen_err <= median) {
            ++beat_median;
        }

        std::vector<std::size_t> pool(n);
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        std::vector<std::size_t> random_subset;
        for (std::size_t i = 0; i < k; ++i) {
            const std::size_t pick = rng.uniform_index(pool.size());
            random_subset.push_back(pool[pick]);
            pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
        }
        std::sort(random_subset.begin(), random_subset.end());
        if (chosen_err <= crs_error(a, b, random_subset)) {
            ++beat_random;
        }
    }
    const bool ok = beat_median >= static_cast<int>(0.99 * trials) &&
                    beat_random >= static_cast<int>(0.95 * trials);
    return {"column-row sampling oracle", ok,
            "<= exhaustive median in " + std::to_string(beat_median) + "/500, <= random pick in " +
                std::to_string(beat_random) + "/500 (need 495/475)"};
}

CheckResult check_planted_needle() {
    Rng rng(12345);
    const NeedleInstance needle = plant_needle(96, 16, 32, 40, rng);

    PolicyConfig laprox_cfg;
    laprox_cfg.policy = Policy::kLaprox;
    laprox_cfg.window = needle.window;
    PolicyConfig mean_cfg;
    mean_cfg.policy = Policy::kSnapKv;
    mean_cfg.window = needle.window;

    const BudgetSpec budget{needle.budget};
    const SelectionPlan norm_plan =
        build_plan(needle.stack, needle.prefill, laprox_cfg, budget, nullptr);
    const SelectionPlan mean_plan =
        build_plan(needle.stack, needle.prefill, mean_cfg, budget, nullptr);

    const auto& norm_kept = norm_plan.retained[0][0];
    const auto& mean_kept = mean_plan.retained[0][0];
    const bool norm_has =
        std::binary_search(norm_kept.begin(), norm_kept.end(), needle.needle_pos);
    const bool mean_has =
        std::binary_search(mean_kept.begin(), mean_kept.end(), needle.needle_pos);

    const Matrix projected = needle_projected_values(needle);
    const Matrix window_attn = needle_window_attention(needle);
    const double norm_err = crs_error(window_attn, projected, norm_kept);
    const double mean_err = crs_error(window_attn, projected, mean_kept);

    const bool ok = norm_has && !mean_has && norm_err < mean_err;
    return {"planted needle separation", ok,
            std::string("norm-product ") + (norm_has ? "retained" : "evicted") +
                ", attention-mean " + (mean_has ? "retained" : "evicted") +
                "; approximation errors " + fmt(norm_err) + " vs " + fmt(mean_err)};
}

CheckResult check_baseline_conformance(std::uint64_t seed) {
    Rng rng(seed);

    // SLLM: four sinks plus the most recent six.
    {
        PolicyConfig cfg;
        cfg.policy = Policy::kSllm;
        const SelectionPlan plan = plan_sllm(1, 1, 100, cfg, 10);
        const std::vector<std::size_t> expected = {0, 1, 2, 3, 94, 95, 96, 97, 98, 99};
        if (plan.retained[0][0] != expected) {
            return {"baseline conformance", false, "sllm fixed-index plan mismatch"};
        }
    }

    // CAKE with gamma 0 produces exactly the SnapKV scores.
    {
        const AttentionStack stack = build_stack(1, 2, 2, 8, rng);
        const Matrix x = Matrix::random_normal(24, stack.model_dim(), 1.0, rng);
        const auto prefill = prefill_stack(stack, x);
        PolicyConfig snap;
        snap.policy = Policy::kSnapKv;
        snap.window = 8;
        PolicyConfig cake = snap;
        cake.policy = Policy::kCake;
        cake.gamma = 0.0;
        const LayerScores a = score_snapkv(prefill[0].acts, snap);
        const LayerScores b = score_cake(prefill[0].acts, cake);
        if (a.per_head != b.per_head) {
            return {"baseline conformance", false, "cake(gamma=0) != snapkv scores"};
        }
    }

    // CriticalKV with eps 0 and unit-norm projected value rows reduces to SnapKV.
    {
        const std::size_t dim = 8;
        const std::size_t seq = 24;
        StackShape shape{1, 1, 1, dim};
        LayerWeights weights;
        const double sd = 1.0 / std::sqrt(static_cast<double>(dim));
        weights.w_q = Matrix::random_normal(dim, dim, sd, rng);
        weights.w_k = Matrix::random_normal(dim, dim, sd, rng);
        weights.w_v = Matrix::random_normal(dim, dim, sd, rng);
        weights.w_o = Matrix::identity(dim);
        const AttentionStack stack = AttentionStack::from_weights(shape, {std::move(weights)});
        const Matrix x = Matrix::random_normal(seq, dim, 1.0, rng);
        PrefillResult res = prefill_layer(stack, 0, x);
        // Replace value states with unit basis rows so every ||H[i,:]|| is exactly 1.
        Matrix basis(seq, dim);
        for (std::size_t t = 0; t < seq; ++t) {
            basis(t, t % dim) = 1.0;
        }
        res.acts.values[0] = std::move(basis);
        PolicyConfig snap;
        snap.policy = Policy::kSnapKv;
        snap.window = 8;
        PolicyConfig critical = snap;
        critical.policy = Policy::kCriticalKv;
        critical.epsilon = 0.0;
        const LayerScores a = score_snapkv(res.acts, snap);
        const LayerScores b = score_criticalkv(res.acts, stack, 0, critical);
        if (a.per_head != b.per_head) {
            return {"baseline conformance", false,
                    "criticalkv(eps=0, unit rows) != snapkv scores"};
        }
    }

    // AdaKV with safeguard 1.0 degenerates to independent per-head top-k.
    {
        ScoreTensor tensor;
        tensor.layers = 2;
        tensor.heads = 3;
        tensor.tokens = 30;
        tensor.is_window.assign(tensor.tokens, 0);
        for (std::size_t t = tensor.tokens - 6; t < tensor.tokens; ++t) {
            tensor.is_window[t] = 1;
        }
        tensor.scores.assign(tensor.layers, {});
        for (auto& layer : tensor.scores) {
            layer.resize(tensor.heads);
            for (auto& head : layer) {
                head.resize(tensor.tokens);
                for (auto& v : head) {
                    v = rng.uniform();
                }
            }
        }
        const BudgetSpec budget{12};
        const SelectionPlan ada = select_adakv(tensor, budget, 1.0);
        const SelectionPlan per_head = select_per_head(tensor, budget);
        if (ada != per_head) {
            return {"baseline conformance", false, "adakv(safeguard=1) != per-head top-k"};
        }
    }

    return {"baseline conformance", true,
            "sllm indices, cake(gamma=0), criticalkv(eps=0), adakv(safeguard=1) all exact"};
}

std::vector<CheckResult> run_selftest(std::uint64_t seed, std::ostream& log) {
    std::vector<CheckResult> results;
    results.push_back(check_head_decomposition(seed));
    results.push_back(check_token_contribution(Rng::derive(seed, 2)));
    results.push_back(check_normalization_ranking(Rng::derive(seed, 3)));
    results.push_back(check_budget_and_window(Rng::derive(seed, 4)));
    results.push_back(check_crs_oracle(Rng::derive(seed, 5)));
    results.push_back(check_planted_needle());
    results.push_back(check_baseline_conformance(Rng::derive(seed, 6)));
    for (const auto& result : results) {
        log << (result.passed ? "[PASS] " : "[FAIL] ") << result.name << ": " << result.detail
            << '\n';
    }
    return results;
}

}  // namespace laprox::selfcheck
