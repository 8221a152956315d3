// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "laprox/matrix.hpp"
#include "laprox/rng.hpp"

namespace laprox {

/// Shape parameters of a synthetic multi-head attention stack.
struct StackShape {
    std::size_t layers = 1;
    std::size_t heads = 1;
    std::size_t kv_heads = 1;
    std::size_t head_dim = 1;

    std::size_t model_dim() const { return heads * head_dim; }
    std::size_t group_size() const { return heads / kv_heads; }
};

/// Projection weights of one layer. Query projections hold one D x d_h block per query
/// head; key/value projections one block per KV head; the output projection is
/// (H * d_h) x D, partitioned row-wise into one d_h x D block per query head.
struct LayerWeights {
    Matrix w_q;  // D x (H * d_h)
    Matrix w_k;  // D x (H_kv * d_h)
    Matrix w_v;  // D x (H_kv * d_h)
    Matrix w_o;  // (H * d_h) x D
};

/**
 * @brief Per-layer, per-head projection weights for a synthetic attention stack.
 *
 * Immutable after construction. Weights are a stand-in for pretrained parameters: any
 * full-rank distribution exercises the structural identities this project verifies.
 */
class AttentionStack {
public:
    /// Builds a stack with weights i.i.d. N(0, 1/D); deterministic per rng state.
    static AttentionStack random(std::size_t layers, std::size_t heads, std::size_t kv_heads,
                                 std::size_t head_dim, Rng& rng);

    /// Like random(), but each (layer, KV head)'s value projection is additionally
    /// scaled by an independent log-normal factor exp(sigma * g). Pretrained stacks
    /// show exactly this kind of magnitude dispersion across heads and layers, and the
    /// budget-allocation experiments are vacuous without it; sigma 0 reproduces
    /// random() bit-exactly.
    static AttentionStack random_with_value_dispersion(std::size_t layers, std::size_t heads,
                                                       std::size_t kv_heads,
                                                       std::size_t head_dim, double sigma,
                                                       Rng& rng);

    /// Wraps explicit weights (used for adversarial and degenerate constructions).
    static AttentionStack from_weights(const StackShape& shape, std::vector<LayerWeights> weights);

    const StackShape& shape() const { return shape_; }
    std::size_t layers() const { return shape_.layers; }
    std::size_t heads() const { return shape_.heads; }
    std::size_t kv_heads() const { return shape_.kv_heads; }
    std::size_t head_dim() const { return shape_.head_dim; }
    std::size_t model_dim() const { return shape_.model_dim(); }

    /// KV head serving query head h (h / group_size).
    std::size_t kv_head_of(std::size_t head) const { return head / shape_.group_size(); }

    const LayerWeights& layer(std::size_t layer) const { return weights_[layer]; }

    Matrix query_weight(std::size_t layer, std::size_t head) const;     // D x d_h
    Matrix key_weight(std::size_t layer, std::size_t kv_head) const;    // D x d_h
    Matrix value_weight(std::size_t layer, std::size_t kv_head) const;  // D x d_h

    /// Row block of W_O owned by a query head (d_h x D). Concatenating the blocks in
    /// head order reconstitutes W_O exactly.
    Matrix output_block(std::size_t layer, std::size_t head) const;

private:
    AttentionStack(StackShape shape, std::vector<LayerWeights> weights);

    StackShape shape_;
    std::vector<LayerWeights> weights_;
};

/// Free-function form of AttentionStack::random.
AttentionStack build_stack(std::size_t layers, std::size_t heads, std::size_t kv_heads,
                           std::size_t head_dim, Rng& rng);

/**
 * @brief Everything a prefill pass produces for one layer, kept for eviction scoring.
 *
 * Invariants: each attention row sums to 1 over unmasked positions, and
 * output == concat_heads * W_O (within 1e-9).
 */
struct LayerActivations {
    std::vector<Matrix> attn;    // per query head, S x S, causal
    std::vector<Matrix> values;  // per KV head, S x d_h
    Matrix concat_heads;         // S x (H * d_h), blocks A^h V^{g(h)}
    Matrix output;               // S x D, pre-residual attention output
    Matrix normed_output;        // S x D, RMS-normed residual output (next layer's input)
    std::size_t group_size = 1;

    std::size_t tokens() const { return attn.empty() ? 0 : attn.front().rows(); }

    /// Value states seen by a query head (its group's KV head).
    const Matrix& value_states(std::size_t head) const { return values[head / group_size]; }
};

struct PrefillResult {
    LayerActivations acts;
    std::vector<Matrix> keys;  // per KV head, S x d_h
};

/// RMS normalization applied row-wise: x / sqrt(mean(x^2) + 1e-12). Normalizes the
/// residual stream between layers; eviction scores never see it, they use
/// pre-residual state.
Matrix rms_norm_rows(const Matrix& x);

/// Causal single-layer forward pass over prompt embeddings x (S x D).
PrefillResult prefill_layer(const AttentionStack& stack, std::size_t layer, const Matrix& x);

/// Prefills every layer, chaining each layer's normed residual output into the next.
std::vector<PrefillResult> prefill_stack(const AttentionStack& stack, const Matrix& embeddings);

/**
 * @brief Retained cache content for one layer during a decode step.
 *
 * Physical K/V live per KV head; retention masks are per query head (ascending token
 * indices into the original sequence). With grouped-query attention a head attends only
 * to its own retained set even when the group's physical union is larger.
 */
struct LayerCacheView {
    std::vector<const Matrix*> keys;                 // per KV head, T x d_h
    std::vector<const Matrix*> values;               // per KV head, T x d_h
    std::vector<std::vector<std::size_t>> retained;  // per query head
};

/**
 * @brief Single decode step for one layer: the query from x attends over the retained
 * cache entries plus the new token's own freshly projected K/V (append-then-attend).
 *
 * Returns the 1 x D pre-residual attention output row. Throws ParameterError if any
 * head's retained set is empty.
 */
Matrix decode_step(const AttentionStack& stack, std::size_t layer, const Matrix& x,
                   const LayerCacheView& view);

/**
 * @brief Frobenius residual of the head-wise decomposition identity,
 * Concat(H^1..H^H) W_O == sum_h H^h W_O^h, relative to the left-hand side.
 *
 * Both sides are evaluated independently (one concatenated product vs. per-block
 * products summed). Contract: <= 1e-9 relative for well-formed activations.
 */
double head_decomposition_residual(const LayerActivations& acts, const AttentionStack& stack,
                                   std::size_t layer);

/**
 * @brief Contribution of token j to the layer output at query position i:
 * sum_h A^h(i,j) * V^h(j,:) * W_O^h, a 1 x D row.
 *
 * Contributions over all j <= i sum to the layer output row i (within 1e-9 relative).
 * Requesting j > i (acausal) throws ParameterError.
 */
Matrix token_contribution(const LayerActivations& acts, const AttentionStack& stack,
                          std::size_t layer, std::size_t query_pos, std::size_t token_pos);

}  // namespace laprox
