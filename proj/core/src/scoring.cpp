// SPDX-License-Identifier: Apache-2.0

#include "laprox/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "laprox/csv.hpp"
#include "laprox/error.hpp"

namespace laprox {

std::string to_string(Policy policy) {
    switch (policy) {
        case Policy::kLaprox: return "laprox";
        case Policy::kSllm: return "sllm";
        case Policy::kSnapKv: return "snapkv";
        case Policy::kCake: return "cake";
        case Policy::kAdaKv: return "adakv";
        case Policy::kCriticalKv: return "criticalkv";
    }
    return "unknown";
}

Policy parse_policy(const std::string& name) {
    if (name == "laprox") return Policy::kLaprox;
    if (name == "sllm") return Policy::kSllm;
    if (name == "snapkv") return Policy::kSnapKv;
    if (name == "cake") return Policy::kCake;
    if (name == "adakv") return Policy::kAdaKv;
    if (name == "criticalkv") return Policy::kCriticalKv;
    throw ParameterError("unknown policy '" + name + "'");
}

std::string to_string(Allocation allocation) {
    switch (allocation) {
        case Allocation::kPerHead: return "per_head";
        case Allocation::kLayerFlatten: return "layer_flatten";
        case Allocation::kGlobal: return "global";
        case Allocation::kGlobalRaw: return "global_raw";
        case Allocation::kCakeLayers: return "cake_layers";
        case Allocation::kFixed: return "fixed";
    }
    return "unknown";
}

Allocation parse_allocation(const std::string& name) {
    if (name == "per_head") return Allocation::kPerHead;
    if (name == "layer_flatten") return Allocation::kLayerFlatten;
    if (name == "global") return Allocation::kGlobal;
    if (name == "global_raw") return Allocation::kGlobalRaw;
    if (name == "cake_layers") return Allocation::kCakeLayers;
    if (name == "fixed") return Allocation::kFixed;
    throw ParameterError("unknown allocation '" + name + "'");
}

bool PolicyConfig::pooling_enabled() const {
    if (pool.has_value()) {
        return *pool;
    }
    return policy != Policy::kLaprox && policy != Policy::kSllm;
}

Allocation PolicyConfig::effective_allocation() const {
    if (allocation.has_value()) {
        return *allocation;
    }
    switch (policy) {
        case Policy::kLaprox: return Allocation::kGlobal;
        case Policy::kSllm: return Allocation::kFixed;
        case Policy::kSnapKv: return Allocation::kPerHead;
        case Policy::kCake: return Allocation::kCakeLayers;
        case Policy::kAdaKv: return Allocation::kLayerFlatten;
        case Policy::kCriticalKv: return Allocation::kLayerFlatten;
    }
    return Allocation::kPerHead;
}

void PolicyConfig::validate() const {
    if (window < 1) {
        throw ParameterError("policy config: window must be >= 1");
    }
    if (pool_kernel == 0 || pool_kernel % 2 == 0) {
        throw ParameterError("policy config: pool kernel must be odd, got " +
                             std::to_string(pool_kernel));
    }
    if (safeguard < 0.0 || safeguard > 1.0) {
        throw ParameterError("policy config: safeguard fraction must be in [0,1]");
    }
    if (gamma < 0.0 || epsilon < 0.0) {
        throw ParameterError("policy config: gamma and epsilon must be nonnegative");
    }
    if (tau1 <= 0.0 || tau2 <= 0.0) {
        throw ParameterError("policy config: tau1 and tau2 must be positive");
    }
}

std::size_t ScoreTensor::window_count() const {
    std::size_t n = 0;
    for (auto f : is_window) {
        n += f != 0;
    }
    return n;
}

Matrix group_mean_attention(const LayerActivations& acts, std::size_t kv_head) {
    const std::size_t group = acts.group_size;
    const std::size_t first = kv_head * group;
    Matrix mean = acts.attn[first];
    for (std::size_t h = first + 1; h < first + group; ++h) {
        mean = add(mean, acts.attn[h]);
    }
    return scale(mean, 1.0 / static_cast<double>(group));
}

namespace {

struct WindowLayout {
    std::size_t tokens = 0;
    std::size_t window = 0;       // effective window (clamped to T)
    std::size_t first_row = 0;    // first observation-window query row
    bool nothing_evictable = false;
};

WindowLayout window_layout(std::size_t tokens, const PolicyConfig& cfg,
                           std::vector<std::string>* warnings) {
    WindowLayout lay;
    lay.tokens = tokens;
    if (tokens <= cfg.window) {
        lay.window = tokens;
        lay.first_row = 0;
        lay.nothing_evictable = true;
        if (warnings != nullptr) {
            warnings->push_back("scoring: sequence of " + std::to_string(tokens) +
                                " tokens fits inside the observation window (" +
                                std::to_string(cfg.window) + "); nothing evictable");
        }
    } else {
        lay.window = cfg.window;
        lay.first_row = tokens - cfg.window;
    }
    return lay;
}

std::vector<std::uint8_t> window_flags(const WindowLayout& lay) {
    std::vector<std::uint8_t> flags(lay.tokens, 0);
    for (std::size_t t = lay.first_row; t < lay.tokens; ++t) {
        flags[t] = 1;
    }
    return flags;
}

/// Column means of the group-mean attention map over the observation-window rows.
std::vector<double> window_column_means(const Matrix& attn, const WindowLayout& lay) {
    std::vector<double> means(lay.tokens, 0.0);
    for (std::size_t i = lay.first_row; i < lay.tokens; ++i) {
        for (std::size_t j = 0; j < lay.tokens; ++j) {
            means[j] += attn(i, j);
        }
    }
    const double inv = 1.0 / static_cast<double>(lay.window);
    for (double& v : means) {
        v *= inv;
    }
    return means;
}

std::vector<double> window_column_l2(const Matrix& attn, const WindowLayout& lay) {
    std::vector<double> norms(lay.tokens, 0.0);
    for (std::size_t i = lay.first_row; i < lay.tokens; ++i) {
        for (std::size_t j = 0; j < lay.tokens; ++j) {
            norms[j] += attn(i, j) * attn(i, j);
        }
    }
    for (double& v : norms) {
        v = std::sqrt(v);
    }
    return norms;
}

std::vector<double> maybe_pool(std::vector<double> scores, const PolicyConfig& cfg) {
    if (!cfg.pooling_enabled()) {
        return scores;
    }
    return avg_pool_1d(scores, cfg.pool_kernel);
}

void zero_window_entries(std::vector<double>& scores, const std::vector<std::uint8_t>& flags) {
    for (std::size_t t = 0; t < scores.size(); ++t) {
        if (flags[t] != 0) {
            scores[t] = 0.0;
        }
    }
}

}  // namespace

LayerScores score_laprox(const LayerActivations& acts, const AttentionStack& stack,
                         std::size_t layer, const PolicyConfig& cfg,
                         std::vector<std::string>* warnings) {
    const auto lay = window_layout(acts.tokens(), cfg, warnings);
    LayerScores out;
    out.is_window = window_flags(lay);
    out.per_head.resize(stack.heads());

    for (std::size_t g = 0; g < stack.kv_heads(); ++g) {
        const Matrix mean_attn = group_mean_attention(acts, g);
        std::vector<double> attn_factor = window_column_l2(mean_attn, lay);
        attn_factor = maybe_pool(std::move(attn_factor), cfg);
        for (std::size_t h = g * acts.group_size; h < (g + 1) * acts.group_size; ++h) {
            const Matrix projected = matmul(acts.values[g], stack.output_block(layer, h));
            const std::vector<double> value_factor = row_l2_norms(projected);
            auto& scores = out.per_head[h];
            scores.resize(lay.tokens, 0.0);
            for (std::size_t t = 0; t < lay.tokens; ++t) {
                scores[t] = attn_factor[t] * value_factor[t];
            }
            zero_window_entries(scores, out.is_window);
        }
    }
    return out;
}

LayerScores score_snapkv(const LayerActivations& acts, const PolicyConfig& cfg,
                         std::vector<std::string>* warnings) {
    const auto lay = window_layout(acts.tokens(), cfg, warnings);
    LayerScores out;
    out.is_window = window_flags(lay);
    const std::size_t heads = acts.attn.size();
    out.per_head.resize(heads);
    const std::size_t kv_heads = heads / acts.group_size;
    for (std::size_t g = 0; g < kv_heads; ++g) {
        const Matrix mean_attn = group_mean_attention(acts, g);
        std::vector<double> scores = maybe_pool(window_column_means(mean_attn, lay), cfg);
        zero_window_entries(scores, out.is_window);
        for (std::size_t h = g * acts.group_size; h < (g + 1) * acts.group_size; ++h) {
            out.per_head[h] = scores;
        }
    }
    return out;
}

LayerScores score_cake(const LayerActivations& acts, const PolicyConfig& cfg,
                       std::vector<std::string>* warnings) {
    const auto lay = window_layout(acts.tokens(), cfg, warnings);
    LayerScores out;
    out.is_window = window_flags(lay);
    const std::size_t heads = acts.attn.size();
    out.per_head.resize(heads);
    const std::size_t kv_heads = heads / acts.group_size;
    for (std::size_t g = 0; g < kv_heads; ++g) {
        const Matrix mean_attn = group_mean_attention(acts, g);
        const std::vector<double> means = window_column_means(mean_attn, lay);
        // Population variance over the window rows (the convention is pinned by tests).
        std::vector<double> scores(lay.tokens, 0.0);
        for (std::size_t j = 0; j < lay.tokens; ++j) {
            double acc = 0.0;
            for (std::size_t i = lay.first_row; i < lay.tokens; ++i) {
                const double d = mean_attn(i, j) - means[j];
                acc += d * d;
            }
            const double variance = acc / static_cast<double>(lay.window);
            scores[j] = means[j] + cfg.gamma * variance;
        }
        scores = maybe_pool(std::move(scores), cfg);
        zero_window_entries(scores, out.is_window);
        for (std::size_t h = g * acts.group_size; h < (g + 1) * acts.group_size; ++h) {
            out.per_head[h] = scores;
        }
    }
    return out;
}

LayerScores score_criticalkv(const LayerActivations& acts, const AttentionStack& stack,
                             std::size_t layer, const PolicyConfig& cfg,
                             std::vector<std::string>* warnings) {
    const auto lay = window_layout(acts.tokens(), cfg, warnings);
    LayerScores out;
    out.is_window = window_flags(lay);
    out.per_head.resize(stack.heads());
    for (std::size_t g = 0; g < stack.kv_heads(); ++g) {
        const Matrix mean_attn = group_mean_attention(acts, g);
        const std::vector<double> pooled = maybe_pool(window_column_means(mean_attn, lay), cfg);
        for (std::size_t h = g * acts.group_size; h < (g + 1) * acts.group_size; ++h) {
            const Matrix projected = matmul(acts.values[g], stack.output_block(layer, h));
            const std::vector<double> value_factor = row_l2_norms(projected);
            auto& scores = out.per_head[h];
            scores.resize(lay.tokens, 0.0);
            for (std::size_t t = 0; t < lay.tokens; ++t) {
                scores[t] = (pooled[t] + cfg.epsilon) * value_factor[t];
            }
            zero_window_entries(scores, out.is_window);
        }
    }
    return out;
}

ScoreTensor compute_scores(const AttentionStack& stack,
                           const std::vector<PrefillResult>& prefill, const PolicyConfig& cfg,
                           std::vector<std::string>* warnings) {
    cfg.validate();
    if (prefill.size() != stack.layers()) {
        throw ConsistencyError("compute_scores: prefill does not cover every layer");
    }
    ScoreTensor tensor;
    tensor.layers = stack.layers();
    tensor.heads = stack.heads();
    tensor.tokens = prefill.empty() ? 0 : prefill.front().acts.tokens();
    tensor.scores.resize(tensor.layers);
    for (std::size_t l = 0; l < tensor.layers; ++l) {
        LayerScores layer_scores;
        switch (cfg.policy) {
            case Policy::kLaprox:
                layer_scores = score_laprox(prefill[l].acts, stack, l, cfg, warnings);
                break;
            case Policy::kSnapKv:
            case Policy::kAdaKv:
            case Policy::kSllm:
                // SLLM ignores scores; the mean-attention tensor keeps the pipeline uniform.
                layer_scores = score_snapkv(prefill[l].acts, cfg, warnings);
                break;
            case Policy::kCake:
                layer_scores = score_cake(prefill[l].acts, cfg, warnings);
                break;
            case Policy::kCriticalKv:
                layer_scores = score_criticalkv(prefill[l].acts, stack, l, cfg, warnings);
                break;
        }
        if (l == 0) {
            tensor.is_window = layer_scores.is_window;
        }
        tensor.scores[l] = std::move(layer_scores.per_head);
    }
    return tensor;
}

SelectionPlan plan_sllm(std::size_t layers, std::size_t heads, std::size_t tokens,
                        const PolicyConfig& cfg, std::size_t per_head_budget) {
    if (per_head_budget < cfg.sink_tokens + 1) {
        throw ParameterError("plan_sllm: budget " + std::to_string(per_head_budget) +
                             " cannot cover " + std::to_string(cfg.sink_tokens) +
                             " sink tokens plus a recent window");
    }
    std::vector<std::size_t> kept;
    if (per_head_budget >= tokens) {
        kept.resize(tokens);
        for (std::size_t t = 0; t < tokens; ++t) {
            kept[t] = t;
        }
    } else {
        const std::size_t sinks = std::min(cfg.sink_tokens, tokens);
        const std::size_t recent = per_head_budget - cfg.sink_tokens;
        for (std::size_t t = 0; t < sinks; ++t) {
            kept.push_back(t);
        }
        for (std::size_t t = tokens - recent; t < tokens; ++t) {
            if (kept.empty() || t > kept.back()) {
                kept.push_back(t);
            }
        }
    }
    SelectionPlan plan{layers, heads, tokens, {}};
    plan.retained.assign(layers, std::vector<std::vector<std::size_t>>(heads, kept));
    return plan;
}

void dump_scores_csv(std::ostream& out, const ScoreTensor& scores) {
    out << "layer,head,token,score,is_window\n";
    for (std::size_t l = 0; l < scores.layers; ++l) {
        for (std::size_t h = 0; h < scores.heads; ++h) {
            for (std::size_t t = 0; t < scores.tokens; ++t) {
                out << l << ',' << h << ',' << t << ',' << format_double(scores.scores[l][h][t])
                    << ',' << (scores.is_window[t] != 0 ? 1 : 0) << '\n';
            }
        }
    }
}

}  // namespace laprox
