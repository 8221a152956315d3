// SPDX-License-Identifier: Apache-2.0

#include "laprox/kv_cache.hpp"

#include <algorithm>
#include <ostream>
#include <string>

#include "laprox/error.hpp"

namespace laprox {

std::size_t SelectionPlan::total_retained() const {
    std::size_t total = 0;
    for (const auto& layer : retained) {
        for (const auto& head : layer) {
            total += head.size();
        }
    }
    return total;
}

SelectionPlan full_retention_plan(std::size_t layers, std::size_t heads, std::size_t tokens) {
    SelectionPlan plan{layers, heads, tokens, {}};
    std::vector<std::size_t> all(tokens);
    for (std::size_t t = 0; t < tokens; ++t) {
        all[t] = t;
    }
    plan.retained.assign(layers, std::vector<std::vector<std::size_t>>(heads, all));
    return plan;
}

void validate_plan(const SelectionPlan& plan) {
    if (plan.retained.size() != plan.layers) {
        throw ParameterError("plan: layer count mismatch");
    }
    for (std::size_t l = 0; l < plan.layers; ++l) {
        if (plan.retained[l].size() != plan.heads) {
            throw ParameterError("plan: head count mismatch at layer " + std::to_string(l));
        }
        for (std::size_t h = 0; h < plan.heads; ++h) {
            const auto& idx = plan.retained[l][h];
            for (std::size_t i = 0; i < idx.size(); ++i) {
                if (idx[i] >= plan.tokens) {
                    throw ParameterError("plan: index " + std::to_string(idx[i]) +
                                         " out of range [0, " + std::to_string(plan.tokens) +
                                         ") at layer " + std::to_string(l) + " head " +
                                         std::to_string(h));
                }
                if (i > 0 && idx[i] <= idx[i - 1]) {
                    throw ParameterError("plan: indices not strictly ascending at layer " +
                                         std::to_string(l) + " head " + std::to_string(h));
                }
            }
        }
    }
}

bool plan_includes_window(const SelectionPlan& plan, std::size_t window) {
    const std::size_t w = std::min(window, plan.tokens);
    const std::size_t first = plan.tokens - w;
    for (const auto& layer : plan.retained) {
        for (const auto& head : layer) {
            for (std::size_t t = first; t < plan.tokens; ++t) {
                if (!std::binary_search(head.begin(), head.end(), t)) {
                    return false;
                }
            }
        }
    }
    return true;
}

RetentionStats retention_stats(const SelectionPlan& plan) {
    RetentionStats stats;
    stats.counts.resize(plan.layers);
    stats.layer_totals.assign(plan.layers, 0);
    double sum = 0.0;
    double sum_sq = 0.0;
    std::size_t n = 0;
    for (std::size_t l = 0; l < plan.layers; ++l) {
        stats.counts[l].resize(plan.heads);
        for (std::size_t h = 0; h < plan.heads; ++h) {
            const std::size_t c = plan.retained[l][h].size();
            stats.counts[l][h] = c;
            stats.layer_totals[l] += c;
            stats.total += c;
            sum += static_cast<double>(c);
            sum_sq += static_cast<double>(c) * static_cast<double>(c);
            ++n;
        }
    }
    if (n > 0) {
        const double mean = sum / static_cast<double>(n);
        stats.cross_head_variance = sum_sq / static_cast<double>(n) - mean * mean;
        stats.cross_head_variance = std::max(stats.cross_head_variance, 0.0);
    }
    return stats;
}

KvCache::KvCache(std::size_t layers, std::size_t kv_heads, std::size_t head_dim)
    : layers_(layers),
      kv_heads_(kv_heads),
      head_dim_(head_dim),
      keys_(layers, std::vector<Matrix>(kv_heads, Matrix(0, head_dim))),
      values_(layers, std::vector<Matrix>(kv_heads, Matrix(0, head_dim))) {}

KvCache KvCache::from_prefill(const AttentionStack& stack,
                              const std::vector<PrefillResult>& prefill) {
    if (prefill.size() != stack.layers()) {
        throw ConsistencyError("from_prefill: expected " + std::to_string(stack.layers()) +
                               " prefilled layers, got " + std::to_string(prefill.size()));
    }
    KvCache cache(stack.layers(), stack.kv_heads(), stack.head_dim());
    std::size_t expected_tokens = 0;
    for (std::size_t l = 0; l < prefill.size(); ++l) {
        const auto& layer = prefill[l];
        if (layer.keys.size() != stack.kv_heads() ||
            layer.acts.values.size() != stack.kv_heads()) {
            throw ConsistencyError("from_prefill: KV head count mismatch at layer " +
                                   std::to_string(l));
        }
        for (std::size_t g = 0; g < stack.kv_heads(); ++g) {
            const std::size_t t = layer.keys[g].rows();
            if (l == 0 && g == 0) {
                expected_tokens = t;
            }
            if (t != expected_tokens || layer.acts.values[g].rows() != expected_tokens) {
                throw ConsistencyError("from_prefill: inconsistent token count at layer " +
                                       std::to_string(l) + " (expected " +
                                       std::to_string(expected_tokens) + ")");
            }
            cache.keys_[l][g] = layer.keys[g];
            cache.values_[l][g] = layer.acts.values[g];
        }
    }
    return cache;
}

std::size_t KvCache::tokens(std::size_t layer, std::size_t kv_head) const {
    return keys_[layer][kv_head].rows();
}

const Matrix& KvCache::keys(std::size_t layer, std::size_t kv_head) const {
    return keys_[layer][kv_head];
}

const Matrix& KvCache::values(std::size_t layer, std::size_t kv_head) const {
    return values_[layer][kv_head];
}

void KvCache::append(std::size_t layer, std::size_t kv_head, std::span<const double> key,
                     std::span<const double> value) {
    keys_[layer][kv_head].append_row(key);
    values_[layer][kv_head].append_row(value);
}

LayerCacheView KvCache::full_layer_view(std::size_t layer, std::size_t heads) const {
    LayerCacheView view;
    view.keys.reserve(kv_heads_);
    view.values.reserve(kv_heads_);
    for (std::size_t g = 0; g < kv_heads_; ++g) {
        view.keys.push_back(&keys_[layer][g]);
        view.values.push_back(&values_[layer][g]);
    }
    const std::size_t group = heads / kv_heads_;
    view.retained.resize(heads);
    for (std::size_t h = 0; h < heads; ++h) {
        const std::size_t t = tokens(layer, h / group);
        view.retained[h].resize(t);
        for (std::size_t i = 0; i < t; ++i) {
            view.retained[h][i] = i;
        }
    }
    return view;
}

CompressedCacheView::CompressedCacheView(const KvCache& cache, SelectionPlan plan)
    : cache_(&cache), plan_(std::move(plan)) {
    if (plan_.layers != cache.layers()) {
        throw ParameterError("apply_plan: plan has " + std::to_string(plan_.layers) +
                             " layers, cache has " + std::to_string(cache.layers()));
    }
    if (plan_.heads % cache.kv_heads() != 0) {
        throw ParameterError("apply_plan: KV head count must divide plan head count");
    }
    const std::size_t group = plan_.heads / cache.kv_heads();
    physical_.resize(plan_.layers);
    for (std::size_t l = 0; l < plan_.layers; ++l) {
        physical_[l].resize(cache.kv_heads());
        for (std::size_t h = 0; h < plan_.heads; ++h) {
            const std::size_t g = h / group;
            const std::size_t axis = cache.tokens(l, g);
            for (std::size_t idx : plan_.retained[l][h]) {
                if (idx >= axis) {
                    throw ParameterError("apply_plan: index " + std::to_string(idx) +
                                         " out of range for layer " + std::to_string(l) +
                                         " kv head " + std::to_string(g) + " (" +
                                         std::to_string(axis) + " tokens)");
                }
            }
            auto& uni = physical_[l][g];
            std::vector<std::size_t> merged;
            merged.reserve(uni.size() + plan_.retained[l][h].size());
            std::set_union(uni.begin(), uni.end(), plan_.retained[l][h].begin(),
                           plan_.retained[l][h].end(), std::back_inserter(merged));
            uni = std::move(merged);
        }
    }
}

const std::vector<std::size_t>& CompressedCacheView::physical_indices(
    std::size_t layer, std::size_t kv_head) const {
    return physical_[layer][kv_head];
}

std::size_t CompressedCacheView::physical_tokens(std::size_t layer, std::size_t kv_head) const {
    return physical_[layer][kv_head].size();
}

LayerCacheView CompressedCacheView::layer_view(std::size_t layer) const {
    LayerCacheView view;
    view.keys.reserve(cache_->kv_heads());
    view.values.reserve(cache_->kv_heads());
    for (std::size_t g = 0; g < cache_->kv_heads(); ++g) {
        view.keys.push_back(&cache_->keys(layer, g));
        view.values.push_back(&cache_->values(layer, g));
    }
    view.retained = plan_.retained[layer];
    return view;
}

CompressedCacheView::Materialized CompressedCacheView::materialize() const {
    KvCache out(cache_->layers(), cache_->kv_heads(), cache_->head_dim());
    const std::size_t group = plan_.heads / cache_->kv_heads();
    std::size_t max_axis = 0;
    for (std::size_t l = 0; l < plan_.layers; ++l) {
        for (std::size_t g = 0; g < cache_->kv_heads(); ++g) {
            for (std::size_t idx : physical_[l][g]) {
                out.append(l, g, cache_->keys(l, g).row(idx), cache_->values(l, g).row(idx));
            }
            max_axis = std::max(max_axis, physical_[l][g].size());
        }
    }
    SelectionPlan remapped{plan_.layers, plan_.heads, max_axis, {}};
    remapped.retained.resize(plan_.layers);
    for (std::size_t l = 0; l < plan_.layers; ++l) {
        remapped.retained[l].resize(plan_.heads);
        for (std::size_t h = 0; h < plan_.heads; ++h) {
            const auto& uni = physical_[l][h / group];
            auto& dst = remapped.retained[l][h];
            dst.reserve(plan_.retained[l][h].size());
            for (std::size_t idx : plan_.retained[l][h]) {
                const auto it = std::lower_bound(uni.begin(), uni.end(), idx);
                dst.push_back(static_cast<std::size_t>(it - uni.begin()));
            }
        }
    }
    return Materialized{std::move(out), std::move(remapped)};
}

CompressedCacheView apply_plan(const KvCache& cache, const SelectionPlan& plan) {
    validate_plan(plan);
    return CompressedCacheView(cache, plan);
}

void dump_cache_snapshot(std::ostream& out, const KvCache& cache, const SelectionPlan& plan) {
    const std::size_t group = plan.heads / cache.kv_heads();
    out << "token,layer,head,retained\n";
    for (std::size_t l = 0; l < plan.layers; ++l) {
        for (std::size_t h = 0; h < plan.heads; ++h) {
            const auto& idx = plan.retained[l][h];
            const std::size_t axis = cache.tokens(l, h / group);
            for (std::size_t t = 0; t < axis; ++t) {
                const bool kept = std::binary_search(idx.begin(), idx.end(), t);
                out << t << ',' << l << ',' << h << ',' << (kept ? 1 : 0) << '\n';
            }
        }
    }
}

}  // namespace laprox
