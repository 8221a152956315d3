// SPDX-License-Identifier: Apache-2.0

#include "laprox/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "laprox/error.hpp"

namespace laprox {

double FidelityReport::mean_cosine() const {
    if (cosine.empty()) {
        return 0.0;
    }
    return std::accumulate(cosine.begin(), cosine.end(), 0.0) /
           static_cast<double>(cosine.size());
}

FidelityTrialContext make_fidelity_context(const AttentionStack& stack, const Matrix& prompt,
                                           Rng& rng) {
    FidelityTrialContext ctx;
    ctx.stack = &stack;
    ctx.prefill = prefill_stack(stack, prompt);
    ctx.cache = KvCache::from_prefill(stack, ctx.prefill);

    Matrix x = Matrix::random_normal(1, stack.model_dim(), 1.0, rng);
    for (std::size_t l = 0; l < stack.layers(); ++l) {
        ctx.layer_inputs.push_back(x);
        Matrix out = decode_step(stack, l, x, ctx.cache.full_layer_view(l, stack.heads()));
        x = rms_norm_rows(add(out, x));
        ctx.full_outputs.push_back(std::move(out));
    }
    return ctx;
}

FidelityReport measure_fidelity_with_context(const FidelityTrialContext& ctx,
                                             const PolicyConfig& cfg, std::size_t budget,
                                             bool include_residual,
                                             std::vector<std::string>* warnings) {
    const AttentionStack& stack = *ctx.stack;
    const SelectionPlan plan =
        build_plan(stack, ctx.prefill, cfg, BudgetSpec{budget}, warnings);
    const CompressedCacheView view = apply_plan(ctx.cache, plan);

    FidelityReport report;
    report.policy = cfg.policy;
    report.budget = budget;
    for (std::size_t l = 0; l < stack.layers(); ++l) {
        const Matrix compressed = decode_step(stack, l, ctx.layer_inputs[l], view.layer_view(l));
        const Matrix& full = ctx.full_outputs[l];
        if (include_residual) {
            const Matrix full_res = rms_norm_rows(add(full, ctx.layer_inputs[l]));
            const Matrix comp_res = rms_norm_rows(add(compressed, ctx.layer_inputs[l]));
            report.cosine.push_back(cosine_similarity(full_res.row(0), comp_res.row(0)));
            report.frob_rel.push_back(relative_frobenius_gap(full_res, comp_res));
        } else {
            report.cosine.push_back(cosine_similarity(full.row(0), compressed.row(0)));
            report.frob_rel.push_back(relative_frobenius_gap(full, compressed));
        }
    }
    return report;
}

FidelityReport measure_fidelity(const AttentionStack& stack, const Matrix& prompt,
                                const PolicyConfig& cfg, std::size_t budget, Rng& rng,
                                bool include_residual, std::vector<std::string>* warnings) {
    const FidelityTrialContext ctx = make_fidelity_context(stack, prompt, rng);
    return measure_fidelity_with_context(ctx, cfg, budget, include_residual, warnings);
}

double crs_error(const Matrix& a, const Matrix& b, std::span<const std::size_t> subset) {
    if (a.cols() != b.rows()) {
        throw ShapeError("crs_error: incompatible shapes " + a.shape_str() + " * " +
                         b.shape_str());
    }
    for (std::size_t i : subset) {
        if (i >= a.cols()) {
            throw ParameterError("crs_error: index " + std::to_string(i) + " out of range");
        }
    }
    const Matrix full = matmul(a, b);
    Matrix approx(full.rows(), full.cols());
    for (std::size_t i : subset) {
        for (std::size_t r = 0; r < a.rows(); ++r) {
            const double ari = a(r, i);
            if (ari == 0.0) {
                continue;
            }
            for (std::size_t c = 0; c < b.cols(); ++c) {
                approx(r, c) += ari * b(i, c);
            }
        }
    }
    return frobenius_norm(subtract(full, approx));
}

CrsRanking crs_rank_indices(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("crs_rank_indices: incompatible shapes " + a.shape_str() + " * " +
                         b.shape_str());
    }
    CrsRanking ranking;
    const std::vector<double> col_norms = col_l2_norms(a);
    const std::vector<double> row_norms = row_l2_norms(b);
    ranking.products.resize(a.cols());
    for (std::size_t i = 0; i < a.cols(); ++i) {
        ranking.products[i] = col_norms[i] * row_norms[i];
        ranking.normalization += ranking.products[i];
    }
    ranking.order.resize(a.cols());
    std::iota(ranking.order.begin(), ranking.order.end(), std::size_t{0});
    std::sort(ranking.order.begin(), ranking.order.end(), [&](std::size_t x, std::size_t y) {
        if (ranking.products[x] != ranking.products[y]) {
            return ranking.products[x] > ranking.products[y];
        }
        return x < y;
    });
    return ranking;
}

NeedleInstance plant_needle(std::size_t tokens, std::size_t window, std::size_t budget,
                            std::size_t needle_pos, Rng& rng) {
    if (tokens <= window) {
        throw ParameterError("plant_needle: sequence must be longer than the window");
    }
    if (needle_pos == 0 || needle_pos >= tokens - window) {
        throw ParameterError("plant_needle: needle must sit strictly inside the evictable "
                             "range (0, " + std::to_string(tokens - window) + ")");
    }
    if (budget <= window || budget >= tokens) {
        throw ParameterError("plant_needle: budget must leave both retained and evicted "
                             "non-window tokens");
    }
    // The attention-mean ranking only reliably drops the needle when the kept fraction
    // is small; a third of the evictable range leaves a wide margin under pooling.
    if (budget - window > (tokens - window) / 3) {
        throw ParameterError("plant_needle: budget too close to the token count for a "
                             "reliable separation");
    }

    const std::size_t dh = 8;
    const double needle_weight = 0.02;

    // Causal attention with near-uniform weights except a starved needle column.
    Matrix attn(tokens, tokens);
    for (std::size_t i = 0; i < tokens; ++i) {
        double row_sum = 0.0;
        for (std::size_t j = 0; j <= i; ++j) {
            const double u = j == needle_pos ? needle_weight : rng.uniform(1.0, 1.5);
            attn(i, j) = u;
            row_sum += u;
        }
        for (std::size_t j = 0; j <= i; ++j) {
            attn(i, j) /= row_sum;
        }
    }

    // Unit-norm value rows; the needle row is rescaled afterwards so its norm product
    // dominates every other token's.
    Matrix values(tokens, dh);
    for (std::size_t t = 0; t < tokens; ++t) {
        std::vector<double> direction(dh);
        for (auto& v : direction) {
            v = rng.normal();
        }
        const double norm = l2_norm(direction);
        for (std::size_t k = 0; k < dh; ++k) {
            values(t, k) = direction[k] / norm;
        }
    }

    const std::size_t first_row = tokens - window;
    std::vector<double> col_norms(tokens, 0.0);
    for (std::size_t i = first_row; i < tokens; ++i) {
        for (std::size_t j = 0; j < tokens; ++j) {
            col_norms[j] += attn(i, j) * attn(i, j);
        }
    }
    for (double& v : col_norms) {
        v = std::sqrt(v);
    }
    double max_other = 0.0;
    for (std::size_t j = 0; j < tokens - window; ++j) {
        if (j != needle_pos) {
            max_other = std::max(max_other, col_norms[j]);
        }
    }
    // The needle's windowed contribution is pinned at 25x the largest ordinary token's.
    // That puts it at the top of the norm-product ranking, and far enough above the
    // cross terms of the ~(T - budget)-vector dropped-set sum that evicting it damages
    // the output on every draw, not just in expectation.
    const double needle_norm = 25.0 * max_other / col_norms[needle_pos];
    for (std::size_t k = 0; k < dh; ++k) {
        values(needle_pos, k) *= needle_norm;
    }

    StackShape shape{1, 1, 1, dh};
    LayerWeights weights;
    weights.w_q = Matrix::random_normal(dh, dh, 1.0 / std::sqrt(double(dh)), rng);
    weights.w_k = Matrix::random_normal(dh, dh, 1.0 / std::sqrt(double(dh)), rng);
    weights.w_v = Matrix::random_normal(dh, dh, 1.0 / std::sqrt(double(dh)), rng);
    weights.w_o = Matrix::identity(dh);

    NeedleInstance instance{AttentionStack::from_weights(shape, {std::move(weights)}),
                            {},
                            tokens,
                            window,
                            budget,
                            needle_pos,
                            needle_weight,
                            needle_norm};

    PrefillResult prefill;
    prefill.acts.group_size = 1;
    prefill.acts.attn.push_back(std::move(attn));
    prefill.acts.values.push_back(std::move(values));
    prefill.acts.concat_heads = matmul(prefill.acts.attn[0], prefill.acts.values[0]);
    prefill.acts.output = matmul(prefill.acts.concat_heads, instance.stack.layer(0).w_o);
    prefill.acts.normed_output = rms_norm_rows(prefill.acts.output);
    prefill.keys.push_back(Matrix(tokens, dh));
    instance.prefill.push_back(std::move(prefill));
    return instance;
}

Matrix needle_projected_values(const NeedleInstance& instance) {
    return matmul(instance.prefill[0].acts.values[0], instance.stack.layer(0).w_o);
}

Matrix needle_window_attention(const NeedleInstance& instance) {
    const Matrix& attn = instance.prefill[0].acts.attn[0];
    const std::size_t first = instance.tokens - instance.window;
    Matrix out(instance.window, instance.tokens);
    for (std::size_t i = 0; i < instance.window; ++i) {
        for (std::size_t j = 0; j < instance.tokens; ++j) {
            out(i, j) = attn(first + i, j);
        }
    }
    return out;
}

std::size_t RetentionReport::max_range() const {
    std::size_t best = 0;
    for (std::size_t l = 0; l < layers; ++l) {
        for (std::size_t h = 0; h < heads; ++h) {
            best = std::max(best, max_counts[l][h] - min_counts[l][h]);
        }
    }
    return best;
}

RetentionReport retention_report(const std::vector<SelectionPlan>& plans) {
    if (plans.size() < 2) {
        throw ParameterError("retention_report: need at least two input plans");
    }
    const std::size_t layers = plans.front().layers;
    const std::size_t heads = plans.front().heads;
    for (const auto& plan : plans) {
        if (plan.layers != layers || plan.heads != heads) {
            throw ConsistencyError("retention_report: plans have mismatched shapes");
        }
    }
    RetentionReport report;
    report.inputs = plans.size();
    report.layers = layers;
    report.heads = heads;
    report.mean_counts.assign(layers, std::vector<double>(heads, 0.0));
    report.min_counts.assign(layers, std::vector<std::size_t>(heads, 0));
    report.max_counts.assign(layers, std::vector<std::size_t>(heads, 0));
    report.across_input_variance.assign(layers, std::vector<double>(heads, 0.0));

    const double inv_n = 1.0 / static_cast<double>(plans.size());
    for (std::size_t l = 0; l < layers; ++l) {
        for (std::size_t h = 0; h < heads; ++h) {
            double sum = 0.0;
            double sum_sq = 0.0;
            std::size_t lo = plans.front().retained[l][h].size();
            std::size_t hi = lo;
            for (const auto& plan : plans) {
                const std::size_t c = plan.retained[l][h].size();
                sum += static_cast<double>(c);
                sum_sq += static_cast<double>(c) * static_cast<double>(c);
                lo = std::min(lo, c);
                hi = std::max(hi, c);
            }
            const double mean = sum * inv_n;
            report.mean_counts[l][h] = mean;
            report.min_counts[l][h] = lo;
            report.max_counts[l][h] = hi;
            report.across_input_variance[l][h] = std::max(sum_sq * inv_n - mean * mean, 0.0);
        }
    }
    return report;
}

}  // namespace laprox
