// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "laprox/attention.hpp"
#include "laprox/matrix.hpp"

namespace laprox {

/**
 * @brief Retained token indices per (layer, query head); the output of any eviction
 * policy. Index lists are ascending and unique.
 *
 * `tokens` records the token-axis length the indices refer to (the prefill T for plans
 * produced by policies; per-head axes may be shorter after materialization).
 */
struct SelectionPlan {
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::size_t tokens = 0;
    std::vector<std::vector<std::vector<std::size_t>>> retained;  // [layer][head]

    std::size_t total_retained() const;

    bool operator==(const SelectionPlan&) const = default;
};

/// Plan retaining every token in every head.
SelectionPlan full_retention_plan(std::size_t layers, std::size_t heads, std::size_t tokens);

/// Checks index lists are sorted, unique, and within [0, tokens); throws ParameterError.
void validate_plan(const SelectionPlan& plan);

/// True when every per-head list contains all observation-window indices [T-w, T).
bool plan_includes_window(const SelectionPlan& plan, std::size_t window);

/// Exact per-head retained counts for one plan.
struct RetentionStats {
    std::vector<std::vector<std::size_t>> counts;  // [layer][head]
    std::vector<std::size_t> layer_totals;
    std::size_t total = 0;
    double cross_head_variance = 0.0;  // population variance over all (layer, head) counts
};

RetentionStats retention_stats(const SelectionPlan& plan);

/**
 * @brief Per-layer, per-KV-head key/value token stores.
 *
 * Single-writer during prefill/append; all reads afterwards are const. After prefill all
 * layers hold the same token count; decode appends grow heads independently.
 */
class KvCache {
public:
    KvCache(std::size_t layers, std::size_t kv_heads, std::size_t head_dim);

    /// Collects the K/V states of a full prefill. Throws ConsistencyError if layers
    /// disagree on token count.
    static KvCache from_prefill(const AttentionStack& stack,
                                const std::vector<PrefillResult>& prefill);

    std::size_t layers() const { return layers_; }
    std::size_t kv_heads() const { return kv_heads_; }
    std::size_t head_dim() const { return head_dim_; }

    std::size_t tokens(std::size_t layer, std::size_t kv_head = 0) const;

    const Matrix& keys(std::size_t layer, std::size_t kv_head) const;
    const Matrix& values(std::size_t layer, std::size_t kv_head) const;

    /// Appends one token's K/V pair to a head (decode-time cache growth).
    void append(std::size_t layer, std::size_t kv_head, std::span<const double> key,
                std::span<const double> value);

    /// View over the full cache for a given query-head count (no compression).
    LayerCacheView full_layer_view(std::size_t layer, std::size_t heads) const;

private:
    std::size_t layers_;
    std::size_t kv_heads_;
    std::size_t head_dim_;
    std::vector<std::vector<Matrix>> keys_;    // [layer][kv_head]
    std::vector<std::vector<Matrix>> values_;  // [layer][kv_head]
};

/**
 * @brief Index-based compressed view of a cache under a selection plan.
 *
 * Selection is per query head; storage is per KV head. A KV head physically retains the
 * union of its query heads' retained sets, and each query head masks down to its own set
 * at attention time, which loses nothing relative to per-head storage.
 */
class CompressedCacheView {
public:
    CompressedCacheView(const KvCache& cache, SelectionPlan plan);

    const SelectionPlan& plan() const { return plan_; }

    /// Union of retained indices across the query heads sharing this KV head.
    const std::vector<std::size_t>& physical_indices(std::size_t layer,
                                                     std::size_t kv_head) const;

    std::size_t physical_tokens(std::size_t layer, std::size_t kv_head) const;

    /// Per-layer adapter consumed by decode_step.
    LayerCacheView layer_view(std::size_t layer) const;

    struct Materialized {
        KvCache cache;
        SelectionPlan plan;  // indices remapped into the compacted per-head axes
    };

    /// Copies retained rows into a contiguous cache, preserving token order.
    Materialized materialize() const;

private:
    const KvCache* cache_;
    SelectionPlan plan_;
    std::vector<std::vector<std::vector<std::size_t>>> physical_;  // [layer][kv_head]
};

/// Builds a compressed view; the underlying cache is not modified. Out-of-range plan
/// indices throw ParameterError.
CompressedCacheView apply_plan(const KvCache& cache, const SelectionPlan& plan);

/// Debug dump, one CSV row per (token, layer, head) with a retained flag.
void dump_cache_snapshot(std::ostream& out, const KvCache& cache, const SelectionPlan& plan);

}  // namespace laprox
