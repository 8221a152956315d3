// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "laprox/attention.hpp"
#include "laprox/kv_cache.hpp"

namespace laprox {

enum class Policy {
    kLaprox,      // ||A[:,i]||_2 * ||VWo[i,:]||_2, globally selected
    kSllm,        // fixed indices: sink tokens + recent window
    kSnapKv,      // mean attention over the observation window, pooled
    kCake,        // mean + gamma * var, with entropy/variance layer budgets
    kAdaKv,       // mean attention, layer-flattened top-k with a safeguard floor
    kCriticalKv,  // (mean + epsilon) * ||VWo[i,:]||, flattened with a safeguard floor
};

std::string to_string(Policy policy);
Policy parse_policy(const std::string& name);

/// How a score tensor is turned into a plan.
enum class Allocation {
    kPerHead,       // independent top-k per head
    kLayerFlatten,  // joint top-k across heads within each layer (+ optional floor)
    kGlobal,        // layer-normalized model-wide top-k
    kGlobalRaw,     // model-wide top-k on raw scores (ablation only)
    kCakeLayers,    // entropy/variance layer budgets, uniform across heads within a layer
    kFixed,         // plan ignores scores (SLLM)
};

std::string to_string(Allocation allocation);
Allocation parse_allocation(const std::string& name);

/**
 * @brief Hyperparameters shared by all eviction policies.
 *
 * Defaults follow the conventions used across the evaluated methods: a 32-token
 * observation window, average pooling with kernel 7 for attention-mean scores, and four
 * sink tokens for the fixed-index policy. gamma/tau/epsilon/safeguard defaults are
 * artifact choices, configurable per experiment.
 */
struct PolicyConfig {
    Policy policy = Policy::kLaprox;
    std::size_t window = 32;
    std::size_t pool_kernel = 7;
    std::size_t sink_tokens = 4;
    double gamma = 1.0;
    double tau1 = 1.0;
    double tau2 = 1.0;
    double epsilon = 0.01;
    double safeguard = 0.2;
    /// Pool the attention-derived factor. Defaults to on for the attention-mean
    /// policies and off for the norm-product score, whose formulation has no pooling
    /// step; override to ablate.
    std::optional<bool> pool;
    /// Selection strategy override (the default is the policy's own allocation).
    std::optional<Allocation> allocation;

    bool pooling_enabled() const;
    Allocation effective_allocation() const;

    /// Validates invariants (window >= 1, odd kernel, safeguard in [0,1], ...).
    void validate() const;
};

/// Scores for one layer: one finite score per (query head, token), plus the per-token
/// observation-window flag. Window tokens are never evicted; selection treats them as
/// strictly greater than any finite score instead of storing infinities.
struct LayerScores {
    std::vector<std::vector<double>> per_head;  // [head][token]
    std::vector<std::uint8_t> is_window;        // [token]
};

/// Per-(layer, head, token) eviction scores for a whole stack.
struct ScoreTensor {
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::size_t tokens = 0;
    std::vector<std::vector<std::vector<double>>> scores;  // [layer][head][token]
    std::vector<std::uint8_t> is_window;                   // [token], shared across layers

    std::size_t window_count() const;
    std::size_t sentinel_total() const { return layers * heads * window_count(); }
};

/// Mean attention map over the query heads of one KV group (grouped-query scoring).
/// With group size 1 this is exactly the head's own map.
Matrix group_mean_attention(const LayerActivations& acts, std::size_t kv_head);

/**
 * @brief Norm-product eviction score: restrict A to the last w query rows, form
 * H = V W_O^h per head, and score token i as ||A[:,i]||_2 * ||H[i,:]||_2.
 *
 * Under grouped-query attention the attention factor is the group-mean map, shared by
 * the group's heads, while H uses each query head's own W_O block. If T <= w every
 * token is window-flagged (nothing evictable) and a warning is recorded.
 */
LayerScores score_laprox(const LayerActivations& acts, const AttentionStack& stack,
                         std::size_t layer, const PolicyConfig& cfg,
                         std::vector<std::string>* warnings = nullptr);

/// Mean attention received over the observation window, average-pooled.
LayerScores score_snapkv(const LayerActivations& acts, const PolicyConfig& cfg,
                         std::vector<std::string>* warnings = nullptr);

/// Mean plus gamma times the population variance of the attention column over the
/// window rows, average-pooled.
LayerScores score_cake(const LayerActivations& acts, const PolicyConfig& cfg,
                       std::vector<std::string>* warnings = nullptr);

/// (pooled mean + epsilon) * ||H[i,:]|| with H = V W_O^h.
LayerScores score_criticalkv(const LayerActivations& acts, const AttentionStack& stack,
                             std::size_t layer, const PolicyConfig& cfg,
                             std::vector<std::string>* warnings = nullptr);

/// Runs the config's scorer over every layer of a prefilled stack.
ScoreTensor compute_scores(const AttentionStack& stack,
                           const std::vector<PrefillResult>& prefill, const PolicyConfig& cfg,
                           std::vector<std::string>* warnings = nullptr);

/**
 * @brief Fixed-index plan: the first sink_tokens indices plus the most recent
 * (budget - sink_tokens) indices, identically in every head.
 */
SelectionPlan plan_sllm(std::size_t layers, std::size_t heads, std::size_t tokens,
                        const PolicyConfig& cfg, std::size_t per_head_budget);

/// CSV dump: layer,head,token,score,is_window.
void dump_scores_csv(std::ostream& out, const ScoreTensor& scores);

}  // namespace laprox
