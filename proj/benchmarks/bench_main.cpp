// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "laprox/attention.hpp"
#include "laprox/eval.hpp"
#include "laprox/scoring.hpp"
#include "laprox/selection.hpp"

namespace {

using namespace laprox;

void BM_Matmul(benchmark::State& state) {
    const auto n = static_cast<std::size_t>(state.range(0));
    Rng rng(1);
    const Matrix a = Matrix::random_normal(n, n, 1.0, rng);
    const Matrix b = Matrix::random_normal(n, n, 1.0, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(matmul(a, b));
    }
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(128)->Arg(256);

void BM_PrefillLayer(benchmark::State& state) {
    const auto seq = static_cast<std::size_t>(state.range(0));
    Rng rng(2);
    const AttentionStack stack = build_stack(1, 4, 4, 16, rng);
    const Matrix x = Matrix::random_normal(seq, stack.model_dim(), 1.0, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(prefill_layer(stack, 0, x));
    }
}
BENCHMARK(BM_PrefillLayer)->Arg(64)->Arg(256);

void BM_ScoreNormProduct(benchmark::State& state) {
    const auto seq = static_cast<std::size_t>(state.range(0));
    Rng rng(3);
    const AttentionStack stack = build_stack(1, 4, 4, 16, rng);
    const Matrix x = Matrix::random_normal(seq, stack.model_dim(), 1.0, rng);
    const PrefillResult res = prefill_layer(stack, 0, x);
    PolicyConfig cfg;
    cfg.policy = Policy::kLaprox;
    for (auto _ : state) {
        benchmark::DoNotOptimize(score_laprox(res.acts, stack, 0, cfg));
    }
}
BENCHMARK(BM_ScoreNormProduct)->Arg(256)->Arg(512);

void BM_GlobalSelection(benchmark::State& state) {
    const auto tokens = static_cast<std::size_t>(state.range(0));
    Rng rng(4);
    ScoreTensor tensor;
    tensor.layers = 8;
    tensor.heads = 8;
    tensor.tokens = tokens;
    tensor.is_window.assign(tokens, 0);
    for (std::size_t t = tokens - 32; t < tokens; ++t) {
        tensor.is_window[t] = 1;
    }
    tensor.scores.assign(tensor.layers, {});
    for (auto& layer : tensor.scores) {
        layer.resize(tensor.heads);
        for (auto& head : layer) {
            head.resize(tokens);
            for (auto& v : head) {
                v = rng.uniform();
            }
        }
    }
    const std::size_t budget = tensor.layers * tensor.heads * (tokens / 4);
    for (auto _ : state) {
        benchmark::DoNotOptimize(select_global(normalize_layer_scores(tensor), budget));
    }
}
BENCHMARK(BM_GlobalSelection)->Arg(512)->Arg(2048);

void BM_FidelityTrial(benchmark::State& state) {
    Rng rng(5);
    const AttentionStack stack = build_stack(2, 2, 2, 8, rng);
    const Matrix prompt = Matrix::random_normal(96, stack.model_dim(), 1.0, rng);
    PolicyConfig cfg;
    cfg.policy = Policy::kLaprox;
    cfg.window = 16;
    for (auto _ : state) {
        Rng trial_rng(6);
        benchmark::DoNotOptimize(measure_fidelity(stack, prompt, cfg, 32, trial_rng));
    }
}
BENCHMARK(BM_FidelityTrial);

}  // namespace

BENCHMARK_MAIN();
