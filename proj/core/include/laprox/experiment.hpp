// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "laprox/attention.hpp"
#include "laprox/scoring.hpp"

namespace laprox {

struct ModelShape {
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t kv_heads = 2;
    std::size_t head_dim = 8;
    /// Log-normal dispersion of per-(layer, head) value-projection magnitudes in the
    /// synthetic stacks. Pretrained models are strongly non-uniform here; 0 gives the
    /// homogeneous i.i.d. stack, where adaptive budget allocation has nothing to find.
    double head_scale_sigma = 1.0;
};

/// Synthetic experiment stack for a seed (deterministic; dispersion per ModelShape).
AttentionStack build_experiment_stack(const ModelShape& model, std::uint64_t seed);

/// Standard-normal prompt embeddings for a seed.
Matrix build_experiment_prompt(const ModelShape& model, std::size_t seq_len,
                               std::uint64_t seed);

/**
 * @brief Parsed experiment configuration (versioned JSON, schema v1).
 *
 * Parsing is fail-closed: unknown fields anywhere in the document are rejected, as are
 * sections that do not belong to the configured experiment, so a config never silently
 * means something else than it says. All outputs of a run are a pure function of
 * (config, seeds).
 */
struct ExperimentConfig {
    int version = 1;
    std::string experiment;  // fidelity | crs | needle | retention | ablation
    std::string output_dir = "out";
    std::vector<std::uint64_t> seeds;

    // fidelity / retention / ablation
    ModelShape model;
    std::size_t seq_len = 64;
    std::vector<PolicyConfig> policies;
    std::vector<std::size_t> budgets;
    std::size_t ablation_window = 32;

    // crs
    std::size_t crs_trials = 500;
    std::size_t crs_n_min = 6;
    std::size_t crs_n_max = 10;
    std::size_t crs_k_min = 1;
    std::size_t crs_k_max = 3;

    // needle
    std::size_t needle_tokens = 96;
    std::size_t needle_window = 16;
    std::size_t needle_budget = 32;
    std::size_t needle_pos = 40;

    static ExperimentConfig from_file(const std::string& path);
    static ExperimentConfig from_json_text(const std::string& text, const std::string& origin);

    /// Resolved config as canonical JSON (sorted keys), embedded in the manifest.
    std::string to_json_text() const;

    /// Throws ConfigError on any violated invariant (unknown policy, infeasible budget,
    /// missing seeds, ...). Called before any output file is created.
    void validate() const;
};

struct RunOptions {
    std::size_t jobs = 1;
};

struct RunResult {
    std::vector<std::string> files;  // paths relative to output_dir, manifest included
};

/// Runs the configured experiment, writes its CSV reports plus a manifest listing every
/// emitted file, and returns the file list. Deterministic for a given config.
RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options,
                         std::ostream& log);

}  // namespace laprox
