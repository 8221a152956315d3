// SPDX-License-Identifier: Apache-2.0

#include "laprox/attention.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "laprox/error.hpp"

namespace laprox {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr double kRmsEps = 1e-12;

Matrix column_block(const Matrix& m, std::size_t first_col, std::size_t width) {
    Matrix out(m.rows(), width);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < width; ++j) {
            out(i, j) = m(i, first_col + j);
        }
    }
    return out;
}

Matrix row_block(const Matrix& m, std::size_t first_row, std::size_t height) {
    Matrix out(height, m.cols());
    for (std::size_t i = 0; i < height; ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out(i, j) = m(first_row + i, j);
        }
    }
    return out;
}

void validate_shape(const StackShape& shape) {
    if (shape.layers == 0 || shape.heads == 0 || shape.kv_heads == 0 || shape.head_dim == 0) {
        throw ParameterError("AttentionStack: all shape parameters must be positive");
    }
    if (shape.heads % shape.kv_heads != 0) {
        throw ParameterError("AttentionStack: kv_heads " + std::to_string(shape.kv_heads) +
                             " must divide heads " + std::to_string(shape.heads));
    }
}

}  // namespace

AttentionStack::AttentionStack(StackShape shape, std::vector<LayerWeights> weights)
    : shape_(shape), weights_(std::move(weights)) {}

AttentionStack AttentionStack::random(std::size_t layers, std::size_t heads,
                                      std::size_t kv_heads, std::size_t head_dim, Rng& rng) {
    return random_with_value_dispersion(layers, heads, kv_heads, head_dim, 0.0, rng);
}

AttentionStack AttentionStack::random_with_value_dispersion(std::size_t layers,
                                                            std::size_t heads,
                                                            std::size_t kv_heads,
                                                            std::size_t head_dim, double sigma,
                                                            Rng& rng) {
    StackShape shape{layers, heads, kv_heads, head_dim};
    validate_shape(shape);
    const std::size_t d = shape.model_dim();
    const double stddev = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<LayerWeights> weights;
    weights.reserve(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        LayerWeights w;
        w.w_q = Matrix::random_normal(d, heads * head_dim, stddev, rng);
        w.w_k = Matrix::random_normal(d, kv_heads * head_dim, stddev, rng);
        w.w_v = Matrix::random_normal(d, kv_heads * head_dim, stddev, rng);
        w.w_o = Matrix::random_normal(heads * head_dim, d, stddev, rng);
        weights.push_back(std::move(w));
    }
    if (sigma != 0.0) {
        for (std::size_t l = 0; l < layers; ++l) {
            for (std::size_t g = 0; g < kv_heads; ++g) {
                const double scale = std::exp(sigma * rng.normal());
                for (std::size_t r = 0; r < d; ++r) {
                    for (std::size_t c = g * head_dim; c < (g + 1) * head_dim; ++c) {
                        weights[l].w_v(r, c) *= scale;
                    }
                }
            }
        }
    }
    return AttentionStack(shape, std::move(weights));
}

AttentionStack AttentionStack::from_weights(const StackShape& shape,
                                            std::vector<LayerWeights> weights) {
    validate_shape(shape);
    if (weights.size() != shape.layers) {
        throw ShapeError("AttentionStack::from_weights: expected " +
                         std::to_string(shape.layers) + " layers, got " +
                         std::to_string(weights.size()));
    }
    const std::size_t d = shape.model_dim();
    for (const auto& w : weights) {
        if (w.w_q.rows() != d || w.w_q.cols() != shape.heads * shape.head_dim ||
            w.w_k.rows() != d || w.w_k.cols() != shape.kv_heads * shape.head_dim ||
            w.w_v.rows() != d || w.w_v.cols() != shape.kv_heads * shape.head_dim ||
            w.w_o.rows() != shape.heads * shape.head_dim || w.w_o.cols() != d) {
            throw ShapeError("AttentionStack::from_weights: weight shapes do not match stack");
        }
    }
    return AttentionStack(shape, std::move(weights));
}

Matrix AttentionStack::query_weight(std::size_t layer, std::size_t head) const {
    return column_block(weights_[layer].w_q, head * shape_.head_dim, shape_.head_dim);
}

Matrix AttentionStack::key_weight(std::size_t layer, std::size_t kv_head) const {
    return column_block(weights_[layer].w_k, kv_head * shape_.head_dim, shape_.head_dim);
}

Matrix AttentionStack::value_weight(std::size_t layer, std::size_t kv_head) const {
    return column_block(weights_[layer].w_v, kv_head * shape_.head_dim, shape_.head_dim);
}

Matrix AttentionStack::output_block(std::size_t layer, std::size_t head) const {
    return row_block(weights_[layer].w_o, head * shape_.head_dim, shape_.head_dim);
}

AttentionStack build_stack(std::size_t layers, std::size_t heads, std::size_t kv_heads,
                           std::size_t head_dim, Rng& rng) {
    return AttentionStack::random(layers, heads, kv_heads, head_dim, rng);
}

Matrix rms_norm_rows(const Matrix& x) {
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i) {
        double mean_sq = 0.0;
        for (std::size_t j = 0; j < x.cols(); ++j) {
            mean_sq += x(i, j) * x(i, j);
        }
        mean_sq /= static_cast<double>(x.cols());
        const double inv = 1.0 / std::sqrt(mean_sq + kRmsEps);
        for (std::size_t j = 0; j < x.cols(); ++j) {
            out(i, j) = x(i, j) * inv;
        }
    }
    return out;
}

PrefillResult prefill_layer(const AttentionStack& stack, std::size_t layer, const Matrix& x) {
    const auto& shape = stack.shape();
    if (x.cols() != shape.model_dim()) {
        throw ShapeError("prefill_layer: input width " + std::to_string(x.cols()) +
                         " does not match model dim " + std::to_string(shape.model_dim()));
    }
    const std::size_t seq = x.rows();
    const std::size_t dh = shape.head_dim;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    PrefillResult result;
    result.acts.group_size = shape.group_size();
    result.keys.reserve(shape.kv_heads);
    result.acts.values.reserve(shape.kv_heads);
    for (std::size_t g = 0; g < shape.kv_heads; ++g) {
        result.keys.push_back(matmul(x, stack.key_weight(layer, g)));
        result.acts.values.push_back(matmul(x, stack.value_weight(layer, g)));
    }

    result.acts.attn.reserve(shape.heads);
    Matrix concat(seq, shape.heads * dh);
    for (std::size_t h = 0; h < shape.heads; ++h) {
        const std::size_t g = stack.kv_head_of(h);
        const Matrix q = matmul(x, stack.query_weight(layer, h));
        Matrix logits = matmul(q, transpose(result.keys[g]));
        for (std::size_t i = 0; i < seq; ++i) {
            for (std::size_t j = 0; j < seq; ++j) {
                logits(i, j) = j <= i ? logits(i, j) * inv_sqrt_dh : kNegInf;
            }
        }
        Matrix attn = softmax_rows(logits);
        const Matrix head_out = matmul(attn, result.acts.values[g]);
        for (std::size_t i = 0; i < seq; ++i) {
            for (std::size_t j = 0; j < dh; ++j) {
                concat(i, h * dh + j) = head_out(i, j);
            }
        }
        result.acts.attn.push_back(std::move(attn));
    }

    result.acts.concat_heads = std::move(concat);
    result.acts.output = matmul(result.acts.concat_heads, stack.layer(layer).w_o);
    result.acts.normed_output = rms_norm_rows(add(result.acts.output, x));
    return result;
}

std::vector<PrefillResult> prefill_stack(const AttentionStack& stack, const Matrix& embeddings) {
    std::vector<PrefillResult> results;
    results.reserve(stack.layers());
    Matrix x = embeddings;
    for (std::size_t l = 0; l < stack.layers(); ++l) {
        results.push_back(prefill_layer(stack, l, x));
        x = results.back().acts.normed_output;
    }
    return results;
}

Matrix decode_step(const AttentionStack& stack, std::size_t layer, const Matrix& x,
                   const LayerCacheView& view) {
    const auto& shape = stack.shape();
    if (x.rows() != 1 || x.cols() != shape.model_dim()) {
        throw ShapeError("decode_step: expected 1x" + std::to_string(shape.model_dim()) +
                         " input, got " + x.shape_str());
    }
    if (view.keys.size() != shape.kv_heads || view.values.size() != shape.kv_heads ||
        view.retained.size() != shape.heads) {
        throw ShapeError("decode_step: cache view does not match stack shape");
    }
    const std::size_t dh = shape.head_dim;
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix concat(1, shape.heads * dh);
    for (std::size_t h = 0; h < shape.heads; ++h) {
        const auto& retained = view.retained[h];
        if (retained.empty()) {
            throw ParameterError("decode_step: head " + std::to_string(h) +
                                 " has an empty retained set");
        }
        const std::size_t g = stack.kv_head_of(h);
        const Matrix& keys = *view.keys[g];
        const Matrix& vals = *view.values[g];

        const Matrix q = matmul(x, stack.query_weight(layer, h));
        const Matrix k_new = matmul(x, stack.key_weight(layer, g));
        const Matrix v_new = matmul(x, stack.value_weight(layer, g));

        // Logits over retained entries plus the appended fresh token.
        const std::size_t n = retained.size() + 1;
        Matrix logits(1, n);
        for (std::size_t idx = 0; idx < retained.size(); ++idx) {
            logits(0, idx) = dot(q.row(0), keys.row(retained[idx])) * inv_sqrt_dh;
        }
        logits(0, n - 1) = dot(q.row(0), k_new.row(0)) * inv_sqrt_dh;

        const Matrix weights = softmax_rows(logits);
        std::vector<double> head_out(dh, 0.0);
        for (std::size_t idx = 0; idx < retained.size(); ++idx) {
            const auto v_row = vals.row(retained[idx]);
            for (std::size_t j = 0; j < dh; ++j) {
                head_out[j] += weights(0, idx) * v_row[j];
            }
        }
        for (std::size_t j = 0; j < dh; ++j) {
            head_out[j] += weights(0, n - 1) * v_new(0, j);
            concat(0, h * dh + j) = head_out[j];
        }
    }
    return matmul(concat, stack.layer(layer).w_o);
}

double head_decomposition_residual(const LayerActivations& acts, const AttentionStack& stack,
                                   std::size_t layer) {
    const Matrix lhs = matmul(acts.concat_heads, stack.layer(layer).w_o);
    const std::size_t dh = stack.head_dim();
    Matrix rhs(lhs.rows(), lhs.cols());
    for (std::size_t h = 0; h < stack.heads(); ++h) {
        const Matrix head_slice = column_block(acts.concat_heads, h * dh, dh);
        rhs = add(rhs, matmul(head_slice, stack.output_block(layer, h)));
    }
    return relative_frobenius_gap(lhs, rhs);
}

Matrix token_contribution(const LayerActivations& acts, const AttentionStack& stack,
                          std::size_t layer, std::size_t query_pos, std::size_t token_pos) {
    if (token_pos > query_pos) {
        throw ParameterError("token_contribution: token " + std::to_string(token_pos) +
                             " is acausal for query position " + std::to_string(query_pos));
    }
    const std::size_t dh = stack.head_dim();
    Matrix out(1, stack.model_dim());
    for (std::size_t h = 0; h < stack.heads(); ++h) {
        const double weight = acts.attn[h](query_pos, token_pos);
        const Matrix block = stack.output_block(layer, h);
        const auto v_row = acts.value_states(h).row(token_pos);
        for (std::size_t k = 0; k < dh; ++k) {
            const double scaled = weight * v_row[k];
            if (scaled == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < out.cols(); ++j) {
                out(0, j) += scaled * block(k, j);
            }
        }
    }
    return out;
}

}  // namespace laprox
