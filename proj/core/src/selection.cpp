// SPDX-License-Identifier: Apache-2.0

#include "laprox/selection.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "laprox/error.hpp"

namespace laprox {

namespace {

struct Candidate {
    double score;
    std::size_t layer;
    std::size_t head;
    std::size_t token;
};

/// Descending score; ties break toward lower (layer, head, token) for determinism.
bool better(const Candidate& a, const Candidate& b) {
    if (a.score != b.score) {
        return a.score > b.score;
    }
    if (a.layer != b.layer) {
        return a.layer < b.layer;
    }
    if (a.head != b.head) {
        return a.head < b.head;
    }
    return a.token < b.token;
}

std::vector<std::size_t> sentinel_indices(const std::vector<std::uint8_t>& is_window) {
    std::vector<std::size_t> idx;
    for (std::size_t t = 0; t < is_window.size(); ++t) {
        if (is_window[t] != 0) {
            idx.push_back(t);
        }
    }
    return idx;
}

/// Top-k non-sentinel token indices of one head by (score desc, token asc).
std::vector<std::size_t> top_non_sentinel(const std::vector<double>& scores,
                                          const std::vector<std::uint8_t>& is_window,
                                          std::size_t k, std::size_t layer, std::size_t head) {
    std::vector<Candidate> cand;
    cand.reserve(scores.size());
    for (std::size_t t = 0; t < scores.size(); ++t) {
        if (is_window[t] == 0) {
            cand.push_back({scores[t], layer, head, t});
        }
    }
    k = std::min(k, cand.size());
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k), cand.end(),
                      better);
    std::vector<std::size_t> out(k);
    for (std::size_t i = 0; i < k; ++i) {
        out[i] = cand[i].token;
    }
    return out;
}

SelectionPlan empty_plan(std::size_t layers, std::size_t heads, std::size_t tokens) {
    SelectionPlan plan{layers, heads, tokens, {}};
    plan.retained.assign(layers,
                         std::vector<std::vector<std::size_t>>(heads, std::vector<std::size_t>{}));
    return plan;
}

void sort_plan(SelectionPlan& plan) {
    for (auto& layer : plan.retained) {
        for (auto& head : layer) {
            std::sort(head.begin(), head.end());
        }
    }
}

}  // namespace

NormalizedScores normalize_layer_scores(const ScoreTensor& scores) {
    NormalizedScores out;
    out.layers = scores.layers;
    out.heads = scores.heads;
    out.tokens = scores.tokens;
    out.is_window = scores.is_window;
    out.scores = scores.scores;
    out.layer_sums.assign(scores.layers, 0.0);
    for (std::size_t l = 0; l < scores.layers; ++l) {
        double sum = 0.0;
        std::size_t non_sentinel = 0;
        for (std::size_t h = 0; h < scores.heads; ++h) {
            for (std::size_t t = 0; t < scores.tokens; ++t) {
                if (scores.is_window[t] == 0) {
                    sum += scores.scores[l][h][t];
                    ++non_sentinel;
                }
            }
        }
        if (non_sentinel == 0) {
            continue;  // nothing evictable in this layer; sentinels carry it
        }
        if (sum <= 0.0) {
            throw ParameterError("normalize_layer_scores: layer " + std::to_string(l) +
                                 " has all-zero scores; normalization undefined");
        }
        out.layer_sums[l] = sum;
        for (std::size_t h = 0; h < scores.heads; ++h) {
            for (std::size_t t = 0; t < scores.tokens; ++t) {
                if (scores.is_window[t] == 0) {
                    out.scores[l][h][t] /= sum;
                }
            }
        }
    }
    return out;
}

SelectionPlan select_per_head(const ScoreTensor& scores, const BudgetSpec& budget,
                              std::vector<std::string>* warnings) {
    std::vector<std::vector<std::size_t>> budgets(
        scores.layers, std::vector<std::size_t>(scores.heads, budget.per_head));
    return select_per_head_budgets(scores, budgets, warnings);
}

SelectionPlan select_per_head_budgets(const ScoreTensor& scores,
                                      const std::vector<std::vector<std::size_t>>& budgets,
                                      std::vector<std::string>* warnings) {
    const auto sentinels = sentinel_indices(scores.is_window);
    SelectionPlan plan = empty_plan(scores.layers, scores.heads, scores.tokens);
    bool clamped = false;
    for (std::size_t l = 0; l < scores.layers; ++l) {
        for (std::size_t h = 0; h < scores.heads; ++h) {
            std::size_t b = budgets[l][h];
            if (b > scores.tokens) {
                b = scores.tokens;
                clamped = true;
            }
            if (b < sentinels.size()) {
                throw ParameterError("select_per_head: budget " + std::to_string(b) +
                                     " cannot cover the " + std::to_string(sentinels.size()) +
                                     " window tokens of layer " + std::to_string(l) + " head " +
                                     std::to_string(h));
            }
            auto& kept = plan.retained[l][h];
            kept = sentinels;
            const auto extra = top_non_sentinel(scores.scores[l][h], scores.is_window,
                                                b - sentinels.size(), l, h);
            kept.insert(kept.end(), extra.begin(), extra.end());
        }
    }
    if (clamped && warnings != nullptr) {
        warnings->push_back("select_per_head: budget exceeds token count; retaining all");
    }
    sort_plan(plan);
    return plan;
}

SelectionPlan select_layer_flatten(const ScoreTensor& scores,
                                   const std::vector<std::size_t>& layer_budgets,
                                   double safeguard, std::size_t per_head_reference_budget,
                                   std::vector<std::string>* warnings) {
    if (layer_budgets.size() != scores.layers) {
        throw ParameterError("select_layer_flatten: need one budget per layer");
    }
    if (safeguard < 0.0 || safeguard > 1.0) {
        throw ParameterError("select_layer_flatten: safeguard must be in [0,1]");
    }
    const auto sentinels = sentinel_indices(scores.is_window);
    const std::size_t floor_count = static_cast<std::size_t>(
        std::ceil(safeguard * static_cast<double>(per_head_reference_budget)));
    SelectionPlan plan = empty_plan(scores.layers, scores.heads, scores.tokens);
    bool clamped = false;

    for (std::size_t l = 0; l < scores.layers; ++l) {
        const std::size_t layer_budget = layer_budgets[l];
        // Guaranteed part: window sentinels plus each head's own best entries up to the
        // safeguard floor.
        std::size_t used = 0;
        std::vector<std::vector<std::size_t>> guaranteed(scores.heads);
        for (std::size_t h = 0; h < scores.heads; ++h) {
            auto& head_kept = guaranteed[h];
            head_kept = sentinels;
            if (floor_count > sentinels.size()) {
                const std::size_t extra_floor =
                    std::min(floor_count, scores.tokens) - sentinels.size();
                const auto extra = top_non_sentinel(scores.scores[l][h], scores.is_window,
                                                    extra_floor, l, h);
                head_kept.insert(head_kept.end(), extra.begin(), extra.end());
            }
            used += head_kept.size();
        }
        if (used > layer_budget) {
            throw ParameterError(
                "select_layer_flatten: safeguard floor and window need " + std::to_string(used) +
                " tokens but layer " + std::to_string(l) + " budget is " +
                std::to_string(layer_budget));
        }

        std::vector<std::vector<std::uint8_t>> taken(
            scores.heads, std::vector<std::uint8_t>(scores.tokens, 0));
        for (std::size_t h = 0; h < scores.heads; ++h) {
            for (std::size_t t : guaranteed[h]) {
                taken[h][t] = 1;
            }
        }

        // Joint fill: flatten the remaining (head, token) pairs of this layer.
        std::vector<Candidate> cand;
        for (std::size_t h = 0; h < scores.heads; ++h) {
            for (std::size_t t = 0; t < scores.tokens; ++t) {
                if (scores.is_window[t] == 0 && taken[h][t] == 0) {
                    cand.push_back({scores.scores[l][h][t], l, h, t});
                }
            }
        }
        std::size_t remaining = layer_budget - used;
        if (remaining > cand.size()) {
            remaining = cand.size();
            clamped = true;
        }
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(remaining),
                          cand.end(), better);
        for (std::size_t i = 0; i < remaining; ++i) {
            guaranteed[cand[i].head].push_back(cand[i].token);
        }
        plan.retained[l] = std::move(guaranteed);
    }
    if (clamped && warnings != nullptr) {
        warnings->push_back("select_layer_flatten: budget exceeds token count; retaining all");
    }
    sort_plan(plan);
    return plan;
}

SelectionPlan select_adakv(const ScoreTensor& scores, const BudgetSpec& budget,
                           double safeguard, std::vector<std::string>* warnings) {
    std::vector<std::size_t> layer_budgets(scores.layers, budget.layer_budget(scores.heads));
    return select_layer_flatten(scores, layer_budgets, safeguard, budget.per_head, warnings);
}

std::vector<double> cake_layer_preferences(const std::vector<PrefillResult>& prefill,
                                           std::size_t window, double tau1, double tau2) {
    std::vector<double> prefs;
    prefs.reserve(prefill.size());
    for (const auto& layer : prefill) {
        const std::size_t tokens = layer.acts.tokens();
        const std::size_t w = std::min(window, tokens);
        const std::size_t first_row = tokens - w;
        double entropy_sum = 0.0;
        double var_sum = 0.0;
        for (const auto& attn : layer.acts.attn) {
            double head_entropy = 0.0;
            double mean = 0.0;
            double mean_sq = 0.0;
            const std::size_t cells = w * tokens;
            for (std::size_t i = first_row; i < tokens; ++i) {
                for (std::size_t j = 0; j < tokens; ++j) {
                    const double a = attn(i, j);
                    if (a > 0.0) {
                        head_entropy -= a * std::log(a);
                    }
                    mean += a;
                    mean_sq += a * a;
                }
            }
            head_entropy /= static_cast<double>(w);
            mean /= static_cast<double>(cells);
            mean_sq /= static_cast<double>(cells);
            entropy_sum += head_entropy;
            var_sum += std::max(mean_sq - mean * mean, 0.0);
        }
        const double heads = static_cast<double>(layer.acts.attn.size());
        const double entropy = entropy_sum / heads;
        const double variance = var_sum / heads;
        prefs.push_back(std::pow(entropy, 1.0 / tau1) * std::pow(variance, 1.0 / tau2));
    }
    return prefs;
}

std::vector<std::size_t> allocate_proportional(const std::vector<double>& preferences,
                                               std::size_t total, std::size_t min_per_layer,
                                               std::size_t max_per_layer,
                                               std::vector<std::string>* warnings) {
    const std::size_t n = preferences.size();
    if (n == 0) {
        return {};
    }
    if (total < min_per_layer * n) {
        throw ParameterError("allocate_proportional: total " + std::to_string(total) +
                             " below the floor " + std::to_string(min_per_layer) + " x " +
                             std::to_string(n) + " layers");
    }
    if (max_per_layer < min_per_layer ||
        (max_per_layer != static_cast<std::size_t>(-1) && total > max_per_layer * n)) {
        throw ParameterError("allocate_proportional: total exceeds the per-layer cap");
    }

    std::vector<double> prefs = preferences;
    const double pref_sum = std::accumulate(prefs.begin(), prefs.end(), 0.0);
    if (pref_sum <= 0.0 || !std::isfinite(pref_sum)) {
        if (warnings != nullptr) {
            warnings->push_back("allocate_proportional: degenerate preferences; uniform split");
        }
        prefs.assign(n, 1.0);
    }

    // Every layer's floor is reserved upfront; only the surplus is apportioned. That
    // keeps the sum exact: clamping an over-cap layer frees budget for the others,
    // while a floor raise applied after the fact could overshoot the total.
    std::vector<std::size_t> extra(n, 0);
    std::vector<std::uint8_t> capped(n, 0);
    const std::size_t cap_extra = max_per_layer == static_cast<std::size_t>(-1)
                                      ? static_cast<std::size_t>(-1)
                                      : max_per_layer - min_per_layer;
    std::size_t budget_left = total - min_per_layer * n;

    while (budget_left > 0) {
        double sum = 0.0;
        std::size_t free_count = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (capped[i] == 0) {
                sum += prefs[i];
                ++free_count;
            }
        }
        if (free_count == 0) {
            break;  // unreachable: total <= max_per_layer * n was checked above
        }
        std::vector<std::pair<double, std::size_t>> remainders;
        std::size_t assigned = 0;
        for (std::size_t i = 0; i < n; ++i) {
            if (capped[i] != 0) {
                continue;
            }
            const double quota =
                sum > 0.0 ? static_cast<double>(budget_left) * prefs[i] / sum
                          : static_cast<double>(budget_left) / static_cast<double>(free_count);
            extra[i] = static_cast<std::size_t>(std::floor(quota));
            remainders.emplace_back(quota - std::floor(quota), i);
            assigned += extra[i];
        }
        std::size_t leftover = budget_left - assigned;
        std::sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) {
                return a.first > b.first;
            }
            return a.second < b.second;
        });
        for (std::size_t i = 0; i < leftover && i < remainders.size(); ++i) {
            ++extra[remainders[i].second];
        }

        bool clamped = false;
        for (std::size_t i = 0; i < n; ++i) {
            if (capped[i] == 0 && extra[i] > cap_extra) {
                extra[i] = cap_extra;
                capped[i] = 1;
                budget_left -= cap_extra;
                clamped = true;
            }
        }
        if (!clamped) {
            budget_left = 0;
        }
    }

    std::vector<std::size_t> parts(n, min_per_layer);
    for (std::size_t i = 0; i < n; ++i) {
        parts[i] += extra[i];
    }
    return parts;
}

std::vector<std::size_t> cake_layer_budgets(const std::vector<PrefillResult>& prefill,
                                            const PolicyConfig& cfg, const BudgetSpec& budget,
                                            std::size_t heads,
                                            std::vector<std::string>* warnings) {
    const std::size_t tokens = prefill.empty() ? 0 : prefill.front().acts.tokens();
    const auto prefs = cake_layer_preferences(prefill, cfg.window, cfg.tau1, cfg.tau2);
    const std::size_t floor_tokens = heads * std::min(cfg.window, tokens);
    const std::size_t cap_tokens = heads * tokens;
    return allocate_proportional(prefs, budget.model_budget(heads, prefill.size()),
                                 floor_tokens, cap_tokens, warnings);
}

namespace {

template <typename Tensor>
SelectionPlan global_top_k(const Tensor& scores, std::size_t model_budget,
                           std::vector<std::string>* warnings) {
    const auto sentinels = sentinel_indices(scores.is_window);
    const std::size_t sentinel_total = sentinels.size() * scores.layers * scores.heads;
    if (model_budget < sentinel_total) {
        throw ParameterError("select_global: budget " + std::to_string(model_budget) +
                             " below the " + std::to_string(sentinel_total) +
                             " always-retained window tokens");
    }
    SelectionPlan plan = empty_plan(scores.layers, scores.heads, scores.tokens);
    for (std::size_t l = 0; l < scores.layers; ++l) {
        for (std::size_t h = 0; h < scores.heads; ++h) {
            plan.retained[l][h] = sentinels;
        }
    }
    std::vector<Candidate> cand;
    cand.reserve(scores.layers * scores.heads * scores.tokens - sentinel_total);
    for (std::size_t l = 0; l < scores.layers; ++l) {
        for (std::size_t h = 0; h < scores.heads; ++h) {
            for (std::size_t t = 0; t < scores.tokens; ++t) {
                if (scores.is_window[t] == 0) {
                    cand.push_back({scores.scores[l][h][t], l, h, t});
                }
            }
        }
    }
    std::size_t remaining = model_budget - sentinel_total;
    if (remaining > cand.size()) {
        remaining = cand.size();
        if (model_budget > sentinel_total + cand.size() && warnings != nullptr) {
            warnings->push_back("select_global: budget exceeds token count; retaining all");
        }
    }
    std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(remaining),
                      cand.end(), better);
    for (std::size_t i = 0; i < remaining; ++i) {
        plan.retained[cand[i].layer][cand[i].head].push_back(cand[i].token);
    }
    sort_plan(plan);
    return plan;
}

}  // namespace

SelectionPlan select_global(const NormalizedScores& normalized, std::size_t model_budget,
                            std::vector<std::string>* warnings) {
    return global_top_k(normalized, model_budget, warnings);
}

SelectionPlan select_global_raw(const ScoreTensor& scores, std::size_t model_budget,
                                std::vector<std::string>* warnings) {
    return global_top_k(scores, model_budget, warnings);
}

SelectionPlan build_plan(const AttentionStack& stack, const std::vector<PrefillResult>& prefill,
                         const PolicyConfig& cfg, const BudgetSpec& budget,
                         std::vector<std::string>* warnings) {
    cfg.validate();
    if (budget.per_head < cfg.window) {
        throw ParameterError("build_plan: per-head budget " + std::to_string(budget.per_head) +
                             " is below the observation window " + std::to_string(cfg.window));
    }
    const std::size_t tokens = prefill.empty() ? 0 : prefill.front().acts.tokens();

    if (cfg.effective_allocation() == Allocation::kFixed) {
        return plan_sllm(stack.layers(), stack.heads(), tokens, cfg, budget.per_head);
    }

    const ScoreTensor scores = compute_scores(stack, prefill, cfg, warnings);
    switch (cfg.effective_allocation()) {
        case Allocation::kPerHead:
            return select_per_head(scores, budget, warnings);
        case Allocation::kLayerFlatten:
            return select_adakv(scores, budget, cfg.safeguard, warnings);
        case Allocation::kCakeLayers: {
            const auto layer_budgets =
                cake_layer_budgets(prefill, cfg, budget, stack.heads(), warnings);
            // Uniform split across heads within each layer; the remainder goes to the
            // lowest head indices.
            std::vector<std::vector<std::size_t>> head_budgets(
                scores.layers, std::vector<std::size_t>(scores.heads, 0));
            for (std::size_t l = 0; l < scores.layers; ++l) {
                const std::size_t base = layer_budgets[l] / scores.heads;
                const std::size_t rem = layer_budgets[l] % scores.heads;
                for (std::size_t h = 0; h < scores.heads; ++h) {
                    head_budgets[l][h] = base + (h < rem ? 1 : 0);
                }
            }
            return select_per_head_budgets(scores, head_budgets, warnings);
        }
        case Allocation::kGlobal:
            return select_global(normalize_layer_scores(scores),
                                 budget.model_budget(stack.heads(), stack.layers()), warnings);
        case Allocation::kGlobalRaw:
            return select_global_raw(
                scores, budget.model_budget(stack.heads(), stack.layers()), warnings);
        case Allocation::kFixed:
            break;  // handled above
    }
    throw ParameterError("build_plan: unsupported allocation strategy");
}

void dump_plan_csv(std::ostream& out, const SelectionPlan& plan) {
    out << "layer,head,token\n";
    for (std::size_t l = 0; l < plan.layers; ++l) {
        for (std::size_t h = 0; h < plan.heads; ++h) {
            for (std::size_t t : plan.retained[l][h]) {
                out << l << ',' << h << ',' << t << '\n';
            }
        }
    }
}

void dump_plan_summary_csv(std::ostream& out, const SelectionPlan& plan) {
    out << "layer,head,count\n";
    for (std::size_t l = 0; l < plan.layers; ++l) {
        for (std::size_t h = 0; h < plan.heads; ++h) {
            out << l << ',' << h << ',' << plan.retained[l][h].size() << '\n';
        }
    }
}

}  // namespace laprox
