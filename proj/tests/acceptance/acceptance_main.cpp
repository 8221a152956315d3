// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite: runs every release criterion at its stated tolerance and prints one
// pass/fail line per criterion. Exits nonzero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include "laprox/eval.hpp"
#include "laprox/experiment.hpp"
#include "laprox/selfcheck.hpp"

using namespace laprox;

namespace {

struct Criterion {
    std::string name;
    bool passed;
    std::string detail;
    double seconds;
};

double now_seconds() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

Criterion from_check(int index, const selfcheck::CheckResult& result, double seconds) {
    return {"criterion " + std::to_string(index) + " (" + result.name + ")", result.passed,
            result.detail, seconds};
}

/// Criterion 5: at a 25% budget on L=4, H=4, S=256 stacks, the norm-product policy's
/// per-trial mean-over-layers cosine beats the attention-mean baseline in >= 90% of 200
/// seeded trials, and its aggregate mean is strictly higher.
Criterion fidelity_direction() {
    const double start = now_seconds();
    const ModelShape model{4, 4, 4, 8, 1.0};
    const std::size_t seq_len = 256;
    const std::size_t budget = 64;

    PolicyConfig norm_cfg;
    norm_cfg.policy = Policy::kLaprox;
    PolicyConfig mean_cfg;
    mean_cfg.policy = Policy::kSnapKv;

    int wins = 0;
    double norm_total = 0.0;
    double mean_total = 0.0;
    const int trials = 200;
    for (int trial = 0; trial < trials; ++trial) {
        const std::uint64_t seed = 1 + static_cast<std::uint64_t>(trial);
        const AttentionStack stack = build_experiment_stack(model, seed);
        const Matrix prompt = build_experiment_prompt(model, seq_len, seed);
        Rng decode_rng(Rng::derive(seed, 33));
        const FidelityTrialContext ctx = make_fidelity_context(stack, prompt, decode_rng);
        const double norm_cos =
            measure_fidelity_with_context(ctx, norm_cfg, budget).mean_cosine();
        const double mean_cos =
            measure_fidelity_with_context(ctx, mean_cfg, budget).mean_cosine();
        norm_total += norm_cos;
        mean_total += mean_cos;
        wins += norm_cos >= mean_cos;
    }
    const bool passed = wins >= 180 && norm_total > mean_total;
    char detail[160];
    std::snprintf(detail, sizeof(detail),
                  "wins %d/200 (need 180); aggregate mean %.4f vs %.4f", wins,
                  norm_total / trials, mean_total / trials);
    return {"criterion 5 (fidelity direction)", passed, detail, now_seconds() - start};
}

/// Criterion 8: over 100 paired seeds, global allocation helps the norm-product score
/// (L_G > L_L) and helps it more than it helps the attention-only score
/// ((L_G - L_L) > (A_G - A_L)).
Criterion ablation_ordering() {
    const double start = now_seconds();
    const ModelShape model{4, 4, 4, 8, 1.0};
    const std::size_t seq_len = 256;
    const std::size_t budget = 64;

    struct Variant {
        Policy policy;
        Allocation allocation;
    };
    const Variant variants[4] = {{Policy::kSnapKv, Allocation::kPerHead},
                                 {Policy::kSnapKv, Allocation::kGlobal},
                                 {Policy::kLaprox, Allocation::kPerHead},
                                 {Policy::kLaprox, Allocation::kGlobal}};
    double sums[4] = {0, 0, 0, 0};
    const int trials = 100;
    for (int trial = 0; trial < trials; ++trial) {
        const std::uint64_t seed = 500 + static_cast<std::uint64_t>(trial);
        const AttentionStack stack = build_experiment_stack(model, seed);
        const Matrix prompt = build_experiment_prompt(model, seq_len, seed);
        Rng decode_rng(Rng::derive(seed, 33));
        const FidelityTrialContext ctx = make_fidelity_context(stack, prompt, decode_rng);
        for (int v = 0; v < 4; ++v) {
            PolicyConfig cfg;
            cfg.policy = variants[v].policy;
            cfg.allocation = variants[v].allocation;
            sums[v] += measure_fidelity_with_context(ctx, cfg, budget).mean_cosine();
        }
    }
    const double attn_local = sums[0] / trials;
    const double attn_global = sums[1] / trials;
    const double norm_local = sums[2] / trials;
    const double norm_global = sums[3] / trials;
    const bool global_helps = norm_global > norm_local;
    const bool gap_larger = (norm_global - norm_local) > (attn_global - attn_local);
    char detail[200];
    std::snprintf(detail, sizeof(detail),
                  "L_G=%.4f L_L=%.4f A_G=%.4f A_L=%.4f; L gap %+0.4f vs A gap %+0.4f",
                  norm_global, norm_local, attn_global, attn_local,
                  norm_global - norm_local, attn_global - attn_local);
    return {"criterion 8 (ablation ordering)", global_helps && gap_larger, detail,
            now_seconds() - start};
}

/// Criterion 10: the selftest subcommand runs end-to-end in under two minutes with
/// exit code 0.
Criterion selftest_subcommand() {
    const double start = now_seconds();
#ifdef LAPROX_CLI_PATH
    const std::string command = std::string(LAPROX_CLI_PATH) + " selftest > /dev/null 2>&1";
    const int status = std::system(command.c_str());
    const int exit_code = WEXITSTATUS(status);
    const double elapsed = now_seconds() - start;
    char detail[120];
    std::snprintf(detail, sizeof(detail), "exit code %d in %.1f s (limit 120 s)", exit_code,
                  elapsed);
    return {"criterion 10 (selftest subcommand)", exit_code == 0 && elapsed < 120.0, detail,
            elapsed};
#else
    return {"criterion 10 (selftest subcommand)", false, "CLI path not configured", 0.0};
#endif
}

}  // namespace

int main() {
    std::vector<Criterion> results;

    {
        const double t = now_seconds();
        results.push_back(from_check(1, selfcheck::check_head_decomposition(7),
                                     now_seconds() - t));
    }
    {
        const double t = now_seconds();
        results.push_back(from_check(2, selfcheck::check_token_contribution(Rng::derive(7, 2)),
                                     now_seconds() - t));
    }
    {
        const double t = now_seconds();
        results.push_back(from_check(
            3, selfcheck::check_normalization_ranking(Rng::derive(7, 3)), now_seconds() - t));
    }
    {
        const double t = now_seconds();
        results.push_back(from_check(4, selfcheck::check_budget_and_window(Rng::derive(7, 4)),
                                     now_seconds() - t));
    }
    results.push_back(fidelity_direction());
    {
        const double t = now_seconds();
        results.push_back(
            from_check(6, selfcheck::check_crs_oracle(Rng::derive(7, 5)), now_seconds() - t));
    }
    {
        const double t = now_seconds();
        results.push_back(from_check(7, selfcheck::check_planted_needle(), now_seconds() - t));
    }
    results.push_back(ablation_ordering());
    {
        const double t = now_seconds();
        results.push_back(from_check(
            9, selfcheck::check_baseline_conformance(Rng::derive(7, 6)), now_seconds() - t));
    }
    results.push_back(selftest_subcommand());

    bool all_passed = true;
    for (const Criterion& criterion : results) {
        std::printf("[%s] %s: %s (%.2f s)\n", criterion.passed ? "PASS" : "FAIL",
                    criterion.name.c_str(), criterion.detail.c_str(), criterion.seconds);
        all_passed = all_passed && criterion.passed;
    }
    std::printf("%d/%zu criteria passed\n",
                static_cast<int>(std::count_if(results.begin(), results.end(),
                                               [](const Criterion& c) { return c.passed; })),
                results.size());
    return all_passed ? 0 : 1;
}
