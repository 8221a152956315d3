// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <string>
#include <vector>

#include "laprox/scoring.hpp"

namespace laprox {

/**
 * @brief Budget contract for eviction. The per-head budget B includes the observation
 * window, so B - w tokens are chosen by score; a layer's budget is B*H and the model
 * budget is K = B*H*L.
 */
struct BudgetSpec {
    std::size_t per_head = 128;

    std::size_t layer_budget(std::size_t heads) const { return per_head * heads; }
    std::size_t model_budget(std::size_t heads, std::size_t layers) const {
        return per_head * heads * layers;
    }
};

/**
 * @brief Layer-normalized scores: each layer's flattened (head, token) scores divided
 * by their sum, making magnitudes comparable across layers while preserving every
 * within-layer ranking exactly. Window sentinels stay flagged and are excluded from
 * the sums.
 */
struct NormalizedScores {
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::size_t tokens = 0;
    std::vector<std::vector<std::vector<double>>> scores;  // [layer][head][token]
    std::vector<std::uint8_t> is_window;
    std::vector<double> layer_sums;  // normalization constants, one per layer
};

/// Throws ParameterError when a layer's non-sentinel scores are all zero (normalization
/// undefined). A layer with no non-sentinel entries at all is left untouched.
NormalizedScores normalize_layer_scores(const ScoreTensor& scores);

/**
 * @brief Independent top-B per head; window sentinels are always retained and count
 * toward B. Ties break toward the lower token index. B > T retains everything and
 * records a warning.
 */
SelectionPlan select_per_head(const ScoreTensor& scores, const BudgetSpec& budget,
                              std::vector<std::string>* warnings = nullptr);

/// Per-head top-k with an explicit per-(layer, head) budget table (used by layer-wise
/// allocators). Budgets below the window size cannot honor sentinels and throw.
SelectionPlan select_per_head_budgets(const ScoreTensor& scores,
                                      const std::vector<std::vector<std::size_t>>& budgets,
                                      std::vector<std::string>* warnings = nullptr);

/**
 * @brief Joint top-k across the heads of each layer under that layer's budget, with a
 * guaranteed per-head floor of the head's own best entries (window sentinels first).
 *
 * safeguard is a fraction of the per-head budget; safeguard 1.0 degenerates to
 * independent per-head selection, 0.0 to an unconstrained flattened top-k.
 */
SelectionPlan select_layer_flatten(const ScoreTensor& scores,
                                   const std::vector<std::size_t>& layer_budgets,
                                   double safeguard, std::size_t per_head_reference_budget,
                                   std::vector<std::string>* warnings = nullptr);

/// Flattened selection with uniform layer budgets B*H and the safeguard floor.
SelectionPlan select_adakv(const ScoreTensor& scores, const BudgetSpec& budget,
                           double safeguard, std::vector<std::string>* warnings = nullptr);

/// Per-layer allocation preference: mean attention entropy ^ (1/tau1) times mean
/// attention variance ^ (1/tau2), both measured over the observation-window rows.
std::vector<double> cake_layer_preferences(const std::vector<PrefillResult>& prefill,
                                           std::size_t window, double tau1, double tau2);

/**
 * @brief Splits a total budget proportionally to preferences using largest-remainder
 * rounding, so the parts always sum to the total exactly. Each part is clamped into
 * [min_per_layer, max_per_layer], with the slack redistributed proportionally.
 * Degenerate (all-zero) preferences fall back to a uniform split with a warning.
 */
std::vector<std::size_t> allocate_proportional(
    const std::vector<double>& preferences, std::size_t total, std::size_t min_per_layer,
    std::size_t max_per_layer = static_cast<std::size_t>(-1),
    std::vector<std::string>* warnings = nullptr);

/// Entropy/variance layer budgets for a total of B*H*L tokens, floored at H*w per layer
/// so every head can keep its observation window.
std::vector<std::size_t> cake_layer_budgets(const std::vector<PrefillResult>& prefill,
                                            const PolicyConfig& cfg, const BudgetSpec& budget,
                                            std::size_t heads,
                                            std::vector<std::string>* warnings = nullptr);

/**
 * @brief Model-wide top-K over layer-normalized scores. Sentinels are always selected;
 * the total retained count equals K exactly; per-head counts vary freely. Ties break by
 * (lower layer, lower head, lower token). K below the total sentinel count throws.
 */
SelectionPlan select_global(const NormalizedScores& normalized, std::size_t model_budget,
                            std::vector<std::string>* warnings = nullptr);

/// Model-wide top-K on raw (un-normalized) scores. Exposed only for the allocation
/// ablation; raw magnitudes differ across layers, which is exactly the failure mode the
/// normalized variant removes.
SelectionPlan select_global_raw(const ScoreTensor& scores, std::size_t model_budget,
                                std::vector<std::string>* warnings = nullptr);

/**
 * @brief Full eviction pipeline: scores a prefilled stack with the config's policy and
 * turns the scores into a plan with the config's allocation strategy.
 */
SelectionPlan build_plan(const AttentionStack& stack, const std::vector<PrefillResult>& prefill,
                         const PolicyConfig& cfg, const BudgetSpec& budget,
                         std::vector<std::string>* warnings = nullptr);

/// CSV dump of retained indices: layer,head,token.
void dump_plan_csv(std::ostream& out, const SelectionPlan& plan);

/// CSV summary of retained counts: layer,head,count.
void dump_plan_summary_csv(std::ostream& out, const SelectionPlan& plan);

}  // namespace laprox
