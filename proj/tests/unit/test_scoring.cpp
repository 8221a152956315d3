// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "laprox/error.hpp"
#include "laprox/scoring.hpp"

using namespace laprox;

namespace {

/// Single-head synthetic layer with directly constructed attention and value states.
struct Synthetic {
    AttentionStack stack;
    LayerActivations acts;
};

Synthetic make_synthetic(Matrix attn, Matrix values, Matrix w_o) {
    const std::size_t dim = values.cols();
    StackShape shape{1, 1, 1, dim};
    Rng rng(99);
    LayerWeights weights;
    weights.w_q = Matrix::random_normal(dim, dim, 0.1, rng);
    weights.w_k = Matrix::random_normal(dim, dim, 0.1, rng);
    weights.w_v = Matrix::random_normal(dim, dim, 0.1, rng);
    weights.w_o = std::move(w_o);
    Synthetic s{AttentionStack::from_weights(shape, {std::move(weights)}), {}};
    s.acts.group_size = 1;
    s.acts.concat_heads = matmul(attn, values);
    s.acts.output = matmul(s.acts.concat_heads, s.stack.layer(0).w_o);
    s.acts.normed_output = rms_norm_rows(s.acts.output);
    s.acts.attn.push_back(std::move(attn));
    s.acts.values.push_back(std::move(values));
    return s;
}

std::vector<std::size_t> ranking_of(const std::vector<double>& scores,
                                    const std::vector<std::uint8_t>& is_window) {
    std::vector<std::size_t> order;
    for (std::size_t t = 0; t < scores.size(); ++t) {
        if (is_window[t] == 0) {
            order.push_back(t);
        }
    }
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (scores[a] != scores[b]) {
            return scores[a] > scores[b];
        }
        return a < b;
    });
    return order;
}

}  // namespace

TEST_CASE("norm-product score collapses to the attention factor for unit value rows") {
    const std::size_t tokens = 8;
    const std::size_t dim = 4;
    Rng rng(1);
    Matrix attn(tokens, tokens);
    for (std::size_t i = 0; i < tokens; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            attn(i, j) = rng.uniform(0.1, 1.0);
        }
    }
    Matrix values(tokens, dim);
    for (std::size_t t = 0; t < tokens; ++t) {
        values(t, t % dim) = 1.0;  // unit basis rows, so ||H[i,:]|| == 1
    }
    const Synthetic s = make_synthetic(attn, values, Matrix::identity(dim));
    PolicyConfig cfg;
    cfg.policy = Policy::kLaprox;
    cfg.window = 3;
    const LayerScores scores = score_laprox(s.acts, s.stack, 0, cfg);

    for (std::size_t j = 0; j + cfg.window < tokens; ++j) {
        double acc = 0.0;
        for (std::size_t i = tokens - cfg.window; i < tokens; ++i) {
            acc += attn(i, j) * attn(i, j);
        }
        CHECK(scores.per_head[0][j] == doctest::Approx(std::sqrt(acc)).epsilon(1e-12));
    }
    for (std::size_t j = tokens - cfg.window; j < tokens; ++j) {
        CHECK(scores.is_window[j] == 1);
        CHECK(scores.per_head[0][j] == 0.0);
    }
}

TEST_CASE("uniform attention makes the norm-product ranking follow the value rows") {
    const std::size_t tokens = 10;
    const std::size_t dim = 4;
    Matrix attn(tokens, tokens);
    for (std::size_t i = 0; i < tokens; ++i) {
        for (std::size_t j = 0; j < tokens; ++j) {
            attn(i, j) = 1.0 / static_cast<double>(tokens);
        }
    }
    Rng rng(2);
    Matrix values(tokens, dim);
    for (std::size_t t = 0; t < tokens; ++t) {
        for (std::size_t k = 0; k < dim; ++k) {
            values(t, k) = rng.normal();
        }
    }
    const Synthetic s = make_synthetic(attn, values, Matrix::identity(dim));
    PolicyConfig cfg;
    cfg.policy = Policy::kLaprox;
    cfg.window = 4;
    const LayerScores scores = score_laprox(s.acts, s.stack, 0, cfg);

    const std::vector<double> row_norms = row_l2_norms(s.acts.values[0]);
    CHECK(ranking_of(scores.per_head[0], scores.is_window) ==
          ranking_of(row_norms, scores.is_window));
}

TEST_CASE("sequences inside the window are fully sentineled with a warning") {
    Rng rng(3);
    const AttentionStack stack = build_stack(1, 1, 1, 4, rng);
    const Matrix x = Matrix::random_normal(5, 4, 1.0, rng);
    const auto prefill = prefill_stack(stack, x);
    PolicyConfig cfg;
    cfg.policy = Policy::kLaprox;
    cfg.window = 32;
    std::vector<std::string> warnings;
    const ScoreTensor tensor = compute_scores(stack, prefill, cfg, &warnings);
    CHECK(tensor.window_count() == 5);
    CHECK_FALSE(warnings.empty());
}

TEST_CASE("attention-mean score examples") {
    const std::size_t tokens = 6;
    Matrix attn(tokens, tokens);
    for (std::size_t i = 0; i < tokens; ++i) {
        for (std::size_t j = 0; j < tokens; ++j) {
            attn(i, j) = 1.0 / static_cast<double>(tokens);
        }
    }
    Matrix values = Matrix::identity(tokens);
    const Synthetic s = make_synthetic(attn, values, Matrix::identity(tokens));

    SUBCASE("uniform attention scores 1/T with default pooling") {
        PolicyConfig cfg;
        cfg.policy = Policy::kSnapKv;
        cfg.window = 2;
        const LayerScores scores = score_snapkv(s.acts, cfg);
        for (std::size_t j = 0; j + cfg.window < tokens; ++j) {
            CHECK(scores.per_head[0][j] ==
                  doctest::Approx(1.0 / static_cast<double>(tokens)).epsilon(1e-12));
        }
    }
    SUBCASE("kernel one is exactly the column mean") {
        Matrix skewed = attn;
        skewed(4, 1) = 0.5;
        skewed(5, 1) = 0.25;
        const Synthetic s2 = make_synthetic(skewed, values, Matrix::identity(tokens));
        PolicyConfig cfg;
        cfg.policy = Policy::kSnapKv;
        cfg.window = 2;
        cfg.pool_kernel = 1;
        const LayerScores scores = score_snapkv(s2.acts, cfg);
        CHECK(scores.per_head[0][1] == doctest::Approx(0.375).epsilon(1e-12));
    }
    SUBCASE("full mass from every window row scores one") {
        Matrix massive(tokens, tokens);
        for (std::size_t i = 0; i < tokens; ++i) {
            massive(i, 2) = 1.0;
        }
        const Synthetic s3 = make_synthetic(massive, values, Matrix::identity(tokens));
        PolicyConfig cfg;
        cfg.policy = Policy::kSnapKv;
        cfg.window = 2;
        cfg.pool_kernel = 1;
        const LayerScores scores = score_snapkv(s3.acts, cfg);
        CHECK(scores.per_head[0][2] == 1.0);
    }
}

TEST_CASE("attention-mean-variance score examples") {
    const std::size_t tokens = 4;
    Matrix attn(tokens, tokens);
    // Window rows are 2 and 3; column 0 sees [0, 1].
    attn(2, 0) = 0.0;
    attn(3, 0) = 1.0;
    attn(2, 1) = 0.5;
    attn(3, 1) = 0.5;
    const Synthetic s = make_synthetic(attn, Matrix::identity(tokens),
                                       Matrix::identity(tokens));
    PolicyConfig cfg;
    cfg.policy = Policy::kCake;
    cfg.window = 2;
    cfg.pool_kernel = 1;

    SUBCASE("population variance convention") {
        cfg.gamma = 1.0;
        const LayerScores scores = score_cake(s.acts, cfg);
        CHECK(scores.per_head[0][0] == doctest::Approx(0.75).epsilon(1e-12));
    }
    SUBCASE("constant columns have zero variance term") {
        cfg.gamma = 7.0;
        const LayerScores scores = score_cake(s.acts, cfg);
        CHECK(scores.per_head[0][1] == doctest::Approx(0.5).epsilon(1e-12));
    }
    SUBCASE("gamma zero reduces to the attention mean exactly") {
        cfg.gamma = 0.0;
        PolicyConfig snap = cfg;
        snap.policy = Policy::kSnapKv;
        CHECK(score_cake(s.acts, cfg).per_head == score_snapkv(s.acts, snap).per_head);
    }
}

TEST_CASE("mean-times-norm score examples") {
    const std::size_t tokens = 6;
    const std::size_t dim = 4;
    Matrix attn(tokens, tokens);
    for (std::size_t i = 0; i < tokens; ++i) {
        for (std::size_t j = 0; j < tokens; ++j) {
            attn(i, j) = j == 0 ? 0.0 : 1.0 / static_cast<double>(tokens);
        }
    }
    Matrix values(tokens, dim);
    for (std::size_t t = 0; t < tokens; ++t) {
        values(t, 0) = 2.0;  // every ||H[i,:]|| == 2
    }
    const Synthetic s = make_synthetic(attn, values, Matrix::identity(dim));
    PolicyConfig cfg;
    cfg.policy = Policy::kCriticalKv;
    cfg.window = 2;
    cfg.pool_kernel = 1;

    SUBCASE("zero attention column with epsilon") {
        cfg.epsilon = 0.01;
        const LayerScores scores = score_criticalkv(s.acts, s.stack, 0, cfg);
        CHECK(scores.per_head[0][0] == doctest::Approx(0.02).epsilon(1e-12));
    }
    SUBCASE("large epsilon ranks by the value-row norm") {
        cfg.epsilon = 1e6;
        Rng rng(4);
        Matrix varied(tokens, dim);
        for (std::size_t t = 0; t < tokens; ++t) {
            for (std::size_t k = 0; k < dim; ++k) {
                varied(t, k) = rng.normal();
            }
        }
        const Synthetic s2 = make_synthetic(attn, varied, Matrix::identity(dim));
        const LayerScores scores = score_criticalkv(s2.acts, s2.stack, 0, cfg);
        const std::vector<double> norms = row_l2_norms(s2.acts.values[0]);
        CHECK(ranking_of(scores.per_head[0], scores.is_window) ==
              ranking_of(norms, scores.is_window));
    }
}

TEST_CASE("scaling the value rows scales norm-product scores covariantly") {
    const std::size_t tokens = 9;
    const std::size_t dim = 4;
    Rng rng(5);
    Matrix attn(tokens, tokens);
    for (std::size_t i = 0; i < tokens; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            attn(i, j) = rng.uniform(0.1, 1.0);
        }
    }
    Matrix values = Matrix::random_normal(tokens, dim, 1.0, rng);
    const Synthetic base = make_synthetic(attn, values, Matrix::identity(dim));
    const Synthetic scaled = make_synthetic(attn, scale(values, 3.5), Matrix::identity(dim));

    PolicyConfig cfg;
    cfg.policy = Policy::kLaprox;
    cfg.window = 3;
    const LayerScores a = score_laprox(base.acts, base.stack, 0, cfg);
    const LayerScores b = score_laprox(scaled.acts, scaled.stack, 0, cfg);
    for (std::size_t t = 0; t + cfg.window < tokens; ++t) {
        CHECK(b.per_head[0][t] == doctest::Approx(3.5 * a.per_head[0][t]).epsilon(1e-12));
    }
    CHECK(ranking_of(a.per_head[0], a.is_window) == ranking_of(b.per_head[0], b.is_window));
}

TEST_CASE("entrywise dominance implies score dominance") {
    const std::size_t tokens = 5;
    const std::size_t dim = 2;
    Matrix attn(tokens, tokens);
    for (std::size_t i = 0; i < tokens; ++i) {
        attn(i, 0) = 0.4;
        attn(i, 1) = 0.2;  // token 0 dominates token 1 in every row
        attn(i, 2) = 0.4;
    }
    Matrix values(tokens, dim);
    values(0, 0) = 2.0;
    values(1, 0) = 1.0;  // and in value-row norm
    values(2, 0) = 1.0;
    const Synthetic s = make_synthetic(attn, values, Matrix::identity(dim));
    PolicyConfig cfg;
    cfg.window = 2;
    cfg.pool_kernel = 1;

    cfg.policy = Policy::kLaprox;
    const LayerScores lap = score_laprox(s.acts, s.stack, 0, cfg);
    CHECK(lap.per_head[0][0] >= lap.per_head[0][1]);
    cfg.policy = Policy::kSnapKv;
    const LayerScores snap = score_snapkv(s.acts, cfg);
    CHECK(snap.per_head[0][0] >= snap.per_head[0][1]);
    cfg.policy = Policy::kCriticalKv;
    const LayerScores crit = score_criticalkv(s.acts, s.stack, 0, cfg);
    CHECK(crit.per_head[0][0] >= crit.per_head[0][1]);
}

TEST_CASE("group-mean attention is shared within a group and exact for group size one") {
    Rng rng(6);
    const AttentionStack stack = build_stack(1, 4, 2, 4, rng);
    const Matrix x = Matrix::random_normal(10, stack.model_dim(), 1.0, rng);
    const PrefillResult res = prefill_layer(stack, 0, x);

    PolicyConfig cfg;
    cfg.policy = Policy::kSnapKv;
    cfg.window = 4;
    const LayerScores scores = score_snapkv(res.acts, cfg);
    CHECK(scores.per_head[0] == scores.per_head[1]);
    CHECK(scores.per_head[2] == scores.per_head[3]);

    // Group size one: the group mean is bit-identical to the head's own map.
    const AttentionStack mha = build_stack(1, 2, 2, 4, rng);
    const Matrix y = Matrix::random_normal(8, mha.model_dim(), 1.0, rng);
    const PrefillResult mha_res = prefill_layer(mha, 0, y);
    CHECK(group_mean_attention(mha_res.acts, 0) == mha_res.acts.attn[0]);
    CHECK(group_mean_attention(mha_res.acts, 1) == mha_res.acts.attn[1]);
}

TEST_CASE("norm-product scores within a group differ only via the output blocks") {
    Rng rng(7);
    const AttentionStack stack = build_stack(1, 4, 2, 4, rng);
    const Matrix x = Matrix::random_normal(12, stack.model_dim(), 1.0, rng);
    const PrefillResult res = prefill_layer(stack, 0, x);
    PolicyConfig cfg;
    cfg.policy = Policy::kLaprox;
    cfg.window = 4;
    const LayerScores scores = score_laprox(res.acts, stack, 0, cfg);
    // Same group-mean attention factor, different W_O blocks: scores differ in general.
    CHECK(scores.per_head[0] != scores.per_head[1]);
}

TEST_CASE("the pooling flag overrides each policy's default") {
    Rng rng(8);
    const AttentionStack stack = build_stack(1, 1, 1, 4, rng);
    const Matrix x = Matrix::random_normal(20, 4, 1.0, rng);
    const PrefillResult res = prefill_layer(stack, 0, x);

    PolicyConfig cfg;
    cfg.policy = Policy::kLaprox;
    cfg.window = 4;
    CHECK_FALSE(cfg.pooling_enabled());
    const LayerScores unpooled = score_laprox(res.acts, stack, 0, cfg);
    cfg.pool = true;
    CHECK(cfg.pooling_enabled());
    const LayerScores pooled = score_laprox(res.acts, stack, 0, cfg);
    CHECK(unpooled.per_head != pooled.per_head);

    PolicyConfig snap;
    snap.policy = Policy::kSnapKv;
    snap.window = 4;
    CHECK(snap.pooling_enabled());
    snap.pool = false;
    CHECK_FALSE(snap.pooling_enabled());
}

TEST_CASE("fixed-index plans") {
    PolicyConfig cfg;
    cfg.policy = Policy::kSllm;
    SUBCASE("four sinks plus the recent tail") {
        const SelectionPlan plan = plan_sllm(1, 1, 100, cfg, 10);
        CHECK(plan.retained[0][0] ==
              std::vector<std::size_t>{0, 1, 2, 3, 94, 95, 96, 97, 98, 99});
    }
    SUBCASE("budget at or above the sequence keeps everything") {
        const SelectionPlan all = plan_sllm(1, 2, 8, cfg, 8);
        CHECK(all.retained[0][0].size() == 8);
        const SelectionPlan more = plan_sllm(1, 2, 8, cfg, 20);
        CHECK(more.retained[0][1].size() == 8);
    }
    SUBCASE("budget must cover the sinks plus one recent token") {
        CHECK_THROWS_AS(plan_sllm(1, 1, 100, cfg, 4), ParameterError);
    }
}

TEST_CASE("policy config validation") {
    PolicyConfig cfg;
    cfg.pool_kernel = 4;
    CHECK_THROWS_AS(cfg.validate(), ParameterError);
    cfg.pool_kernel = 7;
    cfg.safeguard = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ParameterError);
    cfg.safeguard = 0.2;
    cfg.window = 0;
    CHECK_THROWS_AS(cfg.validate(), ParameterError);
}

TEST_CASE("policy and allocation names round-trip") {
    for (Policy p : {Policy::kLaprox, Policy::kSllm, Policy::kSnapKv, Policy::kCake,
                     Policy::kAdaKv, Policy::kCriticalKv}) {
        CHECK(parse_policy(to_string(p)) == p);
    }
    CHECK_THROWS_AS(parse_policy("h2o"), ParameterError);
    for (Allocation a : {Allocation::kPerHead, Allocation::kLayerFlatten, Allocation::kGlobal,
                         Allocation::kGlobalRaw, Allocation::kCakeLayers, Allocation::kFixed}) {
        CHECK(parse_allocation(to_string(a)) == a);
    }
}

TEST_CASE("score dump has the documented column order") {
    ScoreTensor tensor;
    tensor.layers = 1;
    tensor.heads = 1;
    tensor.tokens = 2;
    tensor.is_window = {0, 1};
    tensor.scores = {{{0.5, 0.0}}};
    std::ostringstream out;
    dump_scores_csv(out, tensor);
    CHECK(out.str() == "layer,head,token,score,is_window\n0,0,0,0.5,0\n0,0,1,0,1\n");
}
