// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "laprox/attention.hpp"
#include "laprox/kv_cache.hpp"
#include "laprox/scoring.hpp"
#include "laprox/selection.hpp"

namespace laprox {

/// Per-layer similarity between full-cache and compressed-cache attention outputs for
/// one decode step.
struct FidelityReport {
    Policy policy = Policy::kLaprox;
    std::size_t budget = 0;
    std::vector<double> cosine;    // per layer, in [-1, 1]
    std::vector<double> frob_rel;  // per layer, ||full - compressed||_F / ||full||_F

    double mean_cosine() const;
};

/**
 * @brief Shared state for comparing several policies on one (stack, prompt, decode
 * token) triple: the prefill pass, the full cache, and the teacher-forced full-cache
 * decode outputs per layer.
 *
 * Both runs of a comparison see identical layer inputs (the full run's residual
 * stream), so only the first decode step is measured and no divergence compounds.
 */
struct FidelityTrialContext {
    const AttentionStack* stack = nullptr;
    std::vector<PrefillResult> prefill;
    KvCache cache;
    std::vector<Matrix> layer_inputs;   // per layer, 1 x D
    std::vector<Matrix> full_outputs;   // per layer, 1 x D pre-residual

    FidelityTrialContext() : cache(0, 0, 0) {}
};

/// Prefills the stack on the prompt and runs the full-cache decode step; the decode
/// embedding is drawn from rng (standard normal).
FidelityTrialContext make_fidelity_context(const AttentionStack& stack, const Matrix& prompt,
                                           Rng& rng);

/// Scores + selects with the policy, then replays the decode step on the compressed
/// view. Cosine is measured on the pre-residual attention output; set include_residual
/// to measure on the normed residual output instead.
FidelityReport measure_fidelity_with_context(const FidelityTrialContext& ctx,
                                             const PolicyConfig& cfg, std::size_t budget,
                                             bool include_residual = false,
                                             std::vector<std::string>* warnings = nullptr);

/// Convenience wrapper: prefill, select, decode, compare, in one call.
FidelityReport measure_fidelity(const AttentionStack& stack, const Matrix& prompt,
                                const PolicyConfig& cfg, std::size_t budget, Rng& rng,
                                bool include_residual = false,
                                std::vector<std::string>* warnings = nullptr);

/**
 * @brief Frobenius error of the k-term column-row approximation:
 * ||A B - sum_{i in subset} A[:,i] B[i,:]||_F.
 *
 * Zero when the subset covers every index; ||A B||_F when it is empty.
 */
double crs_error(const Matrix& a, const Matrix& b, std::span<const std::size_t> subset);

/// Indices ranked by the column-row norm product, descending (ties toward lower index).
struct CrsRanking {
    std::vector<std::size_t> order;
    std::vector<double> products;  // ||A[:,i]|| * ||B[i,:]|| per index
    double normalization = 0.0;    // sum of products; irrelevant to the ranking
};

CrsRanking crs_rank_indices(const Matrix& a, const Matrix& b);

/**
 * @brief Deterministic adversarial single-head layer with a planted needle token whose
 * attention mass is near the bottom of the column-mean ranking while its projected
 * value row dominates, so norm-product scoring retains it and attention-mean scoring
 * evicts it.
 */
struct NeedleInstance {
    AttentionStack stack;  // one layer, one head, identity output projection
    std::vector<PrefillResult> prefill;
    std::size_t tokens = 0;
    std::size_t window = 0;
    std::size_t budget = 0;
    std::size_t needle_pos = 0;
    // Construction parameters, recorded for reproducibility.
    double needle_attention_weight = 0.0;
    double needle_row_norm = 0.0;
};

/// Throws ParameterError when the construction is infeasible for (tokens, window,
/// budget, needle_pos); see the construction notes in the implementation.
NeedleInstance plant_needle(std::size_t tokens, std::size_t window, std::size_t budget,
                            std::size_t needle_pos, Rng& rng);

/// Projected value states of the needle layer (H = V W_O; the identity projection makes
/// this the value matrix itself).
Matrix needle_projected_values(const NeedleInstance& instance);

/// Observation-window rows of the needle layer's attention map (w x T): the left factor
/// of the matrix product the eviction score approximates.
Matrix needle_window_attention(const NeedleInstance& instance);

/// Cross-input retention aggregation over plans produced from different inputs.
struct RetentionReport {
    std::size_t inputs = 0;
    std::size_t layers = 0;
    std::size_t heads = 0;
    std::vector<std::vector<double>> mean_counts;            // [layer][head]
    std::vector<std::vector<std::size_t>> min_counts;        // [layer][head]
    std::vector<std::vector<std::size_t>> max_counts;        // [layer][head]
    std::vector<std::vector<double>> across_input_variance;  // [layer][head]

    /// Largest per-head count range over inputs.
    std::size_t max_range() const;
};

/// Requires at least two plans of identical shape.
RetentionReport retention_report(const std::vector<SelectionPlan>& plans);

}  // namespace laprox
