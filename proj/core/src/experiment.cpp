// SPDX-License-Identifier: Apache-2.0

#include "laprox/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "laprox/csv.hpp"
#include "laprox/error.hpp"
#include "laprox/eval.hpp"

namespace laprox {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown_keys(const json& obj, const std::vector<std::string>& allowed,
                         const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            throw ConfigError("config: unknown field '" + key + "' in " + where);
        }
    }
}

std::size_t get_count(const json& obj, const std::string& key, std::size_t fallback) {
    if (!obj.contains(key)) {
        return fallback;
    }
    const auto& v = obj.at(key);
    if (!v.is_number_unsigned()) {
        throw ConfigError("config: field '" + key + "' must be a nonnegative integer");
    }
    return v.get<std::size_t>();
}

double get_real(const json& obj, const std::string& key, double fallback) {
    if (!obj.contains(key)) {
        return fallback;
    }
    const auto& v = obj.at(key);
    if (!v.is_number()) {
        throw ConfigError("config: field '" + key + "' must be a number");
    }
    return v.get<double>();
}

PolicyConfig parse_policy_config(const json& obj) {
    reject_unknown_keys(obj,
                        {"policy", "window", "pool_kernel", "sink_tokens", "gamma", "tau1",
                         "tau2", "epsilon", "safeguard", "pool", "allocation"},
                        "policies[]");
    if (!obj.contains("policy") || !obj.at("policy").is_string()) {
        throw ConfigError("config: each policies[] entry needs a 'policy' name");
    }
    PolicyConfig cfg;
    try {
        cfg.policy = parse_policy(obj.at("policy").get<std::string>());
        cfg.window = get_count(obj, "window", cfg.window);
        cfg.pool_kernel = get_count(obj, "pool_kernel", cfg.pool_kernel);
        cfg.sink_tokens = get_count(obj, "sink_tokens", cfg.sink_tokens);
        cfg.gamma = get_real(obj, "gamma", cfg.gamma);
        cfg.tau1 = get_real(obj, "tau1", cfg.tau1);
        cfg.tau2 = get_real(obj, "tau2", cfg.tau2);
        cfg.epsilon = get_real(obj, "epsilon", cfg.epsilon);
        cfg.safeguard = get_real(obj, "safeguard", cfg.safeguard);
        if (obj.contains("pool")) {
            if (!obj.at("pool").is_boolean()) {
                throw ConfigError("config: policy field 'pool' must be a boolean");
            }
            cfg.pool = obj.at("pool").get<bool>();
        }
        if (obj.contains("allocation")) {
            cfg.allocation = parse_allocation(obj.at("allocation").get<std::string>());
        }
        cfg.validate();
    } catch (const ParameterError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

json policy_to_json(const PolicyConfig& cfg) {
    json obj;
    obj["policy"] = to_string(cfg.policy);
    obj["window"] = cfg.window;
    obj["pool_kernel"] = cfg.pool_kernel;
    obj["sink_tokens"] = cfg.sink_tokens;
    obj["gamma"] = cfg.gamma;
    obj["tau1"] = cfg.tau1;
    obj["tau2"] = cfg.tau2;
    obj["epsilon"] = cfg.epsilon;
    obj["safeguard"] = cfg.safeguard;
    if (cfg.pool.has_value()) {
        obj["pool"] = *cfg.pool;
    }
    if (cfg.allocation.has_value()) {
        obj["allocation"] = to_string(*cfg.allocation);
    }
    return obj;
}

std::vector<std::uint64_t> parse_seeds(const json& value) {
    std::vector<std::uint64_t> seeds;
    if (value.is_array()) {
        for (const auto& v : value) {
            if (!v.is_number_unsigned()) {
                throw ConfigError("config: 'seeds' array entries must be nonnegative integers");
            }
            seeds.push_back(v.get<std::uint64_t>());
        }
    } else if (value.is_object()) {
        reject_unknown_keys(value, {"base", "count"}, "seeds");
        if (!value.contains("base") || !value.contains("count")) {
            throw ConfigError("config: 'seeds' object needs 'base' and 'count'");
        }
        const auto base = value.at("base").get<std::uint64_t>();
        const auto count = value.at("count").get<std::uint64_t>();
        for (std::uint64_t i = 0; i < count; ++i) {
            seeds.push_back(base + i);
        }
    } else {
        throw ConfigError("config: 'seeds' must be an array or a {base, count} object");
    }
    return seeds;
}

/// Runs fn(0..n-1) on up to `jobs` worker threads. Results land in caller-owned indexed
/// slots, so the merge order never depends on completion order.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> workers;
    workers.reserve(jobs);
    for (std::size_t w = 0; w < jobs; ++w) {
        workers.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& worker : workers) {
        worker.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

struct OutputSink {
    fs::path dir;
    std::vector<std::string> files;

    std::string path(const std::string& name) {
        files.push_back(name);
        return (dir / name).string();
    }
};

}  // namespace

AttentionStack build_experiment_stack(const ModelShape& model, std::uint64_t seed) {
    Rng rng(Rng::derive(seed, 11));
    return AttentionStack::random_with_value_dispersion(
        model.layers, model.heads, model.kv_heads, model.head_dim, model.head_scale_sigma, rng);
}

Matrix build_experiment_prompt(const ModelShape& model, std::size_t seq_len,
                               std::uint64_t seed) {
    Rng rng(Rng::derive(seed, 22));
    return Matrix::random_normal(seq_len, model.heads * model.head_dim, 1.0, rng);
}

namespace {

// ---------------------------------------------------------------------------
// fidelity
// ---------------------------------------------------------------------------

void run_fidelity(const ExperimentConfig& config, const RunOptions& options, OutputSink& sink,
                  std::ostream& log) {
    struct Row {
        std::uint64_t seed;
        std::size_t layer;
        std::string policy;
        std::size_t budget;
        double cosine;
        double frob;
    };
    std::vector<std::vector<Row>> per_seed(config.seeds.size());

    parallel_for(config.seeds.size(), options.jobs, [&](std::size_t i) {
        const std::uint64_t seed = config.seeds[i];
        const AttentionStack stack = build_experiment_stack(config.model, seed);
        const Matrix prompt = build_experiment_prompt(config.model, config.seq_len, seed);
        Rng decode_rng(Rng::derive(seed, 33));
        const FidelityTrialContext ctx = make_fidelity_context(stack, prompt, decode_rng);
        for (const PolicyConfig& policy : config.policies) {
            for (std::size_t budget : config.budgets) {
                const FidelityReport report =
                    measure_fidelity_with_context(ctx, policy, budget);
                for (std::size_t l = 0; l < report.cosine.size(); ++l) {
                    per_seed[i].push_back({seed, l, to_string(policy.policy), budget,
                                           report.cosine[l], report.frob_rel[l]});
                }
            }
        }
    });

    CsvWriter csv(sink.path("fidelity.csv"),
                  {"seed", "layer", "policy", "budget", "cosine", "frob_err"});
    for (const auto& rows : per_seed) {
        for (const Row& r : rows) {
            csv.row({std::to_string(r.seed), std::to_string(r.layer), r.policy,
                     std::to_string(r.budget), format_double(r.cosine),
                     format_double(r.frob)});
        }
    }
    log << "fidelity: " << csv.rows_written() << " rows over " << config.seeds.size()
        << " seeds\n";
}

// ---------------------------------------------------------------------------
// crs
// ---------------------------------------------------------------------------

void run_crs(const ExperimentConfig& config, const RunOptions& options, OutputSink& sink,
             std::ostream& log) {
    struct Row {
        std::size_t trial;
        std::size_t k;
        std::string method;
        double error;
    };
    std::vector<std::vector<Row>> per_trial(config.crs_trials);
    const std::uint64_t base = config.seeds.front();

    parallel_for(config.crs_trials, options.jobs, [&](std::size_t trial) {
        Rng rng(Rng::derive(base, trial));
        const std::size_t n =
            config.crs_n_min + rng.uniform_index(config.crs_n_max - config.crs_n_min + 1);
        const std::size_t k =
            config.crs_k_min + rng.uniform_index(config.crs_k_max - config.crs_k_min + 1);
        const std::size_t m = 8 + rng.uniform_index(9);
        const std::size_t p = 8 + rng.uniform_index(9);
        // Log-normal column/row magnitudes; see the selfcheck oracle for the rationale.
        Matrix a = Matrix::random_normal(m, n, 1.0, rng);
        Matrix b = Matrix::random_normal(n, p, 1.0, rng);
        for (std::size_t i = 0; i < n; ++i) {
            const double col_scale = std::exp(rng.normal());
            const double row_scale = std::exp(rng.normal());
            for (std::size_t r = 0; r < m; ++r) {
                a(r, i) *= col_scale;
            }
            for (std::size_t c = 0; c < p; ++c) {
                b(i, c) *= row_scale;
            }
        }

        const CrsRanking ranking = crs_rank_indices(a, b);
        std::vector<std::size_t> top(ranking.order.begin(),
                                     ranking.order.begin() + static_cast<std::ptrdiff_t>(k));
        std::sort(top.begin(), top.end());

        std::vector<std::size_t> random_subset(n);
        std::iota(random_subset.begin(), random_subset.end(), std::size_t{0});
        for (std::size_t i = 0; i < k; ++i) {
            std::swap(random_subset[i], random_subset[i + rng.uniform_index(n - i)]);
        }
        random_subset.resize(k);
        std::sort(random_subset.begin(), random_subset.end());

        // Exhaustive reference over all C(n, k) subsets.
        std::vector<double> errors;
        std::vector<bool> mask(n, false);
        std::fill(mask.end() - static_cast<std::ptrdiff_t>(k), mask.end(), true);
        std::vector<std::size_t> subset(k);
        do {
            std::size_t idx = 0;
            for (std::size_t i = 0; i < n; ++i) {
                if (mask[i]) {
                    subset[idx++] = i;
                }
            }
            errors.push_back(crs_error(a, b, subset));
        } while (std::next_permutation(mask.begin(), mask.end()));
        std::sort(errors.begin(), errors.end());
        const double best = errors.front();
        const double median =
            errors.size() % 2 == 1
                ? errors[errors.size() / 2]
                : 0.5 * (errors[errors.size() / 2 - 1] + errors[errors.size() / 2]);

        per_trial[trial] = {
            {trial, k, "norm_product", crs_error(a, b, top)},
            {trial, k, "uniform_random", crs_error(a, b, random_subset)},
            {trial, k, "exhaustive_best", best},
            {trial, k, "exhaustive_median", median},
        };
    });

    CsvWriter csv(sink.path("crs.csv"), {"trial", "k", "method", "error"});
    for (const auto& rows : per_trial) {
        for (const Row& r : rows) {
            csv.row({std::to_string(r.trial), std::to_string(r.k), r.method,
                     format_double(r.error)});
        }
    }
    log << "crs: " << csv.rows_written() << " rows over " << config.crs_trials << " trials\n";
}

// ---------------------------------------------------------------------------
// needle
// ---------------------------------------------------------------------------

void run_needle(const ExperimentConfig& config, const RunOptions& options, OutputSink& sink,
                std::ostream& log) {
    struct Row {
        std::uint64_t seed;
        std::string policy;
        bool retained;
        double error;
    };
    std::vector<std::vector<Row>> per_seed(config.seeds.size());

    parallel_for(config.seeds.size(), options.jobs, [&](std::size_t i) {
        const std::uint64_t seed = config.seeds[i];
        Rng rng(seed);
        const NeedleInstance needle = plant_needle(config.needle_tokens, config.needle_window,
                                                   config.needle_budget, config.needle_pos, rng);
        const Matrix projected = needle_projected_values(needle);
        const Matrix window_attn = needle_window_attention(needle);

        for (Policy policy : {Policy::kLaprox, Policy::kSnapKv}) {
            PolicyConfig cfg;
            cfg.policy = policy;
            cfg.window = needle.window;
            const SelectionPlan plan =
                build_plan(needle.stack, needle.prefill, cfg, BudgetSpec{needle.budget});
            const auto& kept = plan.retained[0][0];
            per_seed[i].push_back(
                {seed, to_string(policy),
                 std::binary_search(kept.begin(), kept.end(), needle.needle_pos),
                 crs_error(window_attn, projected, kept)});
        }
    });

    CsvWriter csv(sink.path("needle.csv"),
                  {"seed", "needle_pos", "policy", "retained", "error"});
    for (const auto& rows : per_seed) {
        for (const Row& r : rows) {
            csv.row({std::to_string(r.seed), std::to_string(config.needle_pos), r.policy,
                     r.retained ? "1" : "0", format_double(r.error)});
        }
    }
    log << "needle: " << csv.rows_written() << " rows over " << config.seeds.size()
        << " seeds\n";
}

// ---------------------------------------------------------------------------
// retention
// ---------------------------------------------------------------------------

void run_retention(const ExperimentConfig& config, const RunOptions& options, OutputSink& sink,
                   std::ostream& log) {
    // One model (from the first seed), many inputs: retention varies per input.
    const AttentionStack stack = build_experiment_stack(config.model, config.seeds.front());
    const PolicyConfig& policy = config.policies.front();
    const std::size_t budget = config.budgets.front();

    std::vector<SelectionPlan> plans(config.seeds.size());
    parallel_for(config.seeds.size(), options.jobs, [&](std::size_t i) {
        const Matrix prompt = build_experiment_prompt(config.model, config.seq_len, config.seeds[i]);
        const auto prefill = prefill_stack(stack, prompt);
        plans[i] = build_plan(stack, prefill, policy, BudgetSpec{budget});
    });

    CsvWriter csv(sink.path("retention.csv"), {"input", "layer", "head", "count"});
    for (std::size_t i = 0; i < plans.size(); ++i) {
        const RetentionStats stats = retention_stats(plans[i]);
        for (std::size_t l = 0; l < stats.counts.size(); ++l) {
            for (std::size_t h = 0; h < stats.counts[l].size(); ++h) {
                csv.row({std::to_string(config.seeds[i]), std::to_string(l), std::to_string(h),
                         std::to_string(stats.counts[l][h])});
            }
        }
    }

    const RetentionReport report = retention_report(plans);
    CsvWriter summary(sink.path("retention_summary.csv"),
                      {"layer", "head", "mean", "min", "max", "variance"});
    for (std::size_t l = 0; l < report.layers; ++l) {
        for (std::size_t h = 0; h < report.heads; ++h) {
            summary.row({std::to_string(l), std::to_string(h),
                         format_double(report.mean_counts[l][h]),
                         std::to_string(report.min_counts[l][h]),
                         std::to_string(report.max_counts[l][h]),
                         format_double(report.across_input_variance[l][h])});
        }
    }
    log << "retention: " << csv.rows_written() << " rows, max per-head range "
        << report.max_range() << "\n";
}

// ---------------------------------------------------------------------------
// ablation
// ---------------------------------------------------------------------------

struct AblationVariant {
    const char* name;
    Policy policy;
    Allocation allocation;
};

constexpr AblationVariant kAblationVariants[] = {
    {"A_L", Policy::kSnapKv, Allocation::kPerHead},
    {"A_G", Policy::kSnapKv, Allocation::kGlobal},
    {"L_L", Policy::kLaprox, Allocation::kPerHead},
    {"L_G", Policy::kLaprox, Allocation::kGlobal},
};

void run_ablation(const ExperimentConfig& config, const RunOptions& options, OutputSink& sink,
                  std::ostream& log) {
    struct Row {
        std::uint64_t seed;
        std::string variant;
        std::size_t budget;
        double mean_cosine;
    };
    std::vector<std::vector<Row>> per_seed(config.seeds.size());

    parallel_for(config.seeds.size(), options.jobs, [&](std::size_t i) {
        const std::uint64_t seed = config.seeds[i];
        const AttentionStack stack = build_experiment_stack(config.model, seed);
        const Matrix prompt = build_experiment_prompt(config.model, config.seq_len, seed);
        Rng decode_rng(Rng::derive(seed, 33));
        const FidelityTrialContext ctx = make_fidelity_context(stack, prompt, decode_rng);
        for (std::size_t budget : config.budgets) {
            for (const AblationVariant& variant : kAblationVariants) {
                PolicyConfig cfg;
                cfg.policy = variant.policy;
                cfg.window = config.ablation_window;
                cfg.allocation = variant.allocation;
                const FidelityReport report = measure_fidelity_with_context(ctx, cfg, budget);
                per_seed[i].push_back({seed, variant.name, budget, report.mean_cosine()});
            }
        }
    });

    CsvWriter csv(sink.path("ablation.csv"), {"seed", "variant", "budget", "mean_cosine"});
    for (const auto& rows : per_seed) {
        for (const Row& r : rows) {
            csv.row({std::to_string(r.seed), r.variant, std::to_string(r.budget),
                     format_double(r.mean_cosine)});
        }
    }

    CsvWriter summary(sink.path("ablation_summary.csv"),
                      {"variant", "budget", "mean_cosine", "seeds"});
    for (std::size_t budget : config.budgets) {
        for (const AblationVariant& variant : kAblationVariants) {
            double total = 0.0;
            std::size_t count = 0;
            for (const auto& rows : per_seed) {
                for (const Row& r : rows) {
                    if (r.budget == budget && r.variant == variant.name) {
                        total += r.mean_cosine;
                        ++count;
                    }
                }
            }
            summary.row({variant.name, std::to_string(budget),
                         format_double(count > 0 ? total / static_cast<double>(count) : 0.0),
                         std::to_string(count)});
        }
    }
    log << "ablation: " << csv.rows_written() << " rows, 4 variants\n";
}

}  // namespace

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("config: cannot read '" + path + "'");
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return from_json_text(buffer.str(), path);
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text,
                                                  const std::string& origin) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: parse error in " + origin + ": " + e.what());
    }
    if (!doc.is_object()) {
        throw ConfigError("config: top level must be an object");
    }

    ExperimentConfig config;
    if (!doc.contains("version") || !doc.at("version").is_number_integer()) {
        throw ConfigError("config: missing integer 'version'");
    }
    config.version = doc.at("version").get<int>();
    if (config.version != 1) {
        throw ConfigError("config: unsupported version " + std::to_string(config.version));
    }
    if (!doc.contains("experiment") || !doc.at("experiment").is_string()) {
        throw ConfigError("config: missing 'experiment'");
    }
    config.experiment = doc.at("experiment").get<std::string>();

    std::vector<std::string> allowed = {"version", "experiment", "output_dir", "seeds"};
    const bool uses_model = config.experiment == "fidelity" ||
                            config.experiment == "retention" ||
                            config.experiment == "ablation";
    if (uses_model) {
        allowed.insert(allowed.end(), {"model", "seq_len", "budgets"});
    }
    if (config.experiment == "fidelity" || config.experiment == "retention") {
        allowed.push_back("policies");
    }
    if (config.experiment == "ablation") {
        allowed.push_back("window");
    }
    if (config.experiment == "crs") {
        allowed.push_back("crs");
    }
    if (config.experiment == "needle") {
        allowed.push_back("needle");
    }
    reject_unknown_keys(doc, allowed, "top level");

    if (doc.contains("output_dir")) {
        config.output_dir = doc.at("output_dir").get<std::string>();
    }
    if (!doc.contains("seeds")) {
        throw ConfigError("config: missing 'seeds'");
    }
    config.seeds = parse_seeds(doc.at("seeds"));

    if (doc.contains("model")) {
        const auto& model = doc.at("model");
        reject_unknown_keys(model,
                            {"layers", "heads", "kv_heads", "head_dim", "head_scale_sigma"},
                            "model");
        config.model.layers = get_count(model, "layers", config.model.layers);
        config.model.heads = get_count(model, "heads", config.model.heads);
        config.model.kv_heads = get_count(model, "kv_heads", config.model.heads);
        config.model.head_dim = get_count(model, "head_dim", config.model.head_dim);
        config.model.head_scale_sigma =
            get_real(model, "head_scale_sigma", config.model.head_scale_sigma);
    }
    config.seq_len = get_count(doc, "seq_len", config.seq_len);
    if (doc.contains("policies")) {
        if (!doc.at("policies").is_array()) {
            throw ConfigError("config: 'policies' must be an array");
        }
        for (const auto& policy : doc.at("policies")) {
            config.policies.push_back(parse_policy_config(policy));
        }
    }
    if (doc.contains("budgets")) {
        if (!doc.at("budgets").is_array()) {
            throw ConfigError("config: 'budgets' must be an array");
        }
        for (const auto& budget : doc.at("budgets")) {
            if (!budget.is_number_unsigned()) {
                throw ConfigError("config: budgets must be nonnegative integers");
            }
            config.budgets.push_back(budget.get<std::size_t>());
        }
    }
    config.ablation_window = get_count(doc, "window", config.ablation_window);

    if (doc.contains("crs")) {
        const auto& crs = doc.at("crs");
        reject_unknown_keys(crs, {"trials", "n_min", "n_max", "k_min", "k_max"}, "crs");
        config.crs_trials = get_count(crs, "trials", config.crs_trials);
        config.crs_n_min = get_count(crs, "n_min", config.crs_n_min);
        config.crs_n_max = get_count(crs, "n_max", config.crs_n_max);
        config.crs_k_min = get_count(crs, "k_min", config.crs_k_min);
        config.crs_k_max = get_count(crs, "k_max", config.crs_k_max);
    }
    if (doc.contains("needle")) {
        const auto& needle = doc.at("needle");
        reject_unknown_keys(needle, {"tokens", "window", "budget", "position"}, "needle");
        config.needle_tokens = get_count(needle, "tokens", config.needle_tokens);
        config.needle_window = get_count(needle, "window", config.needle_window);
        config.needle_budget = get_count(needle, "budget", config.needle_budget);
        config.needle_pos = get_count(needle, "position", config.needle_pos);
    }

    config.validate();
    return config;
}

std::string ExperimentConfig::to_json_text() const {
    json doc;
    doc["version"] = version;
    doc["experiment"] = experiment;
    doc["output_dir"] = output_dir;
    doc["seeds"] = seeds;
    if (experiment == "fidelity" || experiment == "retention" || experiment == "ablation") {
        doc["model"] = {{"layers", model.layers},
                        {"heads", model.heads},
                        {"kv_heads", model.kv_heads},
                        {"head_dim", model.head_dim},
                        {"head_scale_sigma", model.head_scale_sigma}};
        doc["seq_len"] = seq_len;
        doc["budgets"] = budgets;
    }
    if (experiment == "fidelity" || experiment == "retention") {
        json list = json::array();
        for (const auto& policy : policies) {
            list.push_back(policy_to_json(policy));
        }
        doc["policies"] = list;
    }
    if (experiment == "ablation") {
        doc["window"] = ablation_window;
    }
    if (experiment == "crs") {
        doc["crs"] = {{"trials", crs_trials},
                      {"n_min", crs_n_min},
                      {"n_max", crs_n_max},
                      {"k_min", crs_k_min},
                      {"k_max", crs_k_max}};
    }
    if (experiment == "needle") {
        doc["needle"] = {{"tokens", needle_tokens},
                         {"window", needle_window},
                         {"budget", needle_budget},
                         {"position", needle_pos}};
    }
    return doc.dump(2);
}

void ExperimentConfig::validate() const {
    static const std::vector<std::string> kKnown = {"fidelity", "crs", "needle", "retention",
                                                    "ablation"};
    if (std::find(kKnown.begin(), kKnown.end(), experiment) == kKnown.end()) {
        throw ConfigError("config: unknown experiment '" + experiment + "'");
    }
    if (seeds.empty()) {
        throw ConfigError("config: at least one seed is required");
    }
    if (experiment == "fidelity" || experiment == "retention") {
        if (policies.empty()) {
            throw ConfigError("config: experiment '" + experiment + "' needs policies");
        }
        if (budgets.empty()) {
            throw ConfigError("config: experiment '" + experiment + "' needs budgets");
        }
        for (const auto& policy : policies) {
            for (std::size_t budget : budgets) {
                if (budget < policy.window) {
                    throw ConfigError("config: budget " + std::to_string(budget) +
                                      " is below the observation window " +
                                      std::to_string(policy.window) + " of policy " +
                                      to_string(policy.policy));
                }
            }
        }
    }
    if (experiment == "retention" && (policies.size() != 1 || budgets.size() != 1)) {
        throw ConfigError("config: retention uses exactly one policy and one budget");
    }
    if (experiment == "retention" && seeds.size() < 2) {
        throw ConfigError("config: retention needs at least two input seeds");
    }
    if (experiment == "ablation") {
        if (budgets.empty()) {
            throw ConfigError("config: ablation needs budgets");
        }
        for (std::size_t budget : budgets) {
            if (budget < ablation_window) {
                throw ConfigError("config: ablation budget " + std::to_string(budget) +
                                  " is below the window " + std::to_string(ablation_window));
            }
        }
    }
    const bool uses_model =
        experiment == "fidelity" || experiment == "retention" || experiment == "ablation";
    if (uses_model) {
        if (model.layers == 0 || model.heads == 0 || model.kv_heads == 0 ||
            model.head_dim == 0 || model.heads % model.kv_heads != 0) {
            throw ConfigError("config: invalid model shape");
        }
        if (seq_len == 0) {
            throw ConfigError("config: seq_len must be positive");
        }
    }
    if (experiment == "crs") {
        if (crs_n_min < 2 || crs_n_min > crs_n_max || crs_k_min < 1 ||
            crs_k_min > crs_k_max || crs_k_max > crs_n_min) {
            throw ConfigError("config: invalid crs instance ranges");
        }
        if (crs_trials == 0) {
            throw ConfigError("config: crs trials must be positive");
        }
    }
    if (experiment == "needle") {
        if (needle_tokens <= needle_window || needle_pos == 0 ||
            needle_pos >= needle_tokens - needle_window || needle_budget <= needle_window ||
            needle_budget >= needle_tokens) {
            throw ConfigError("config: infeasible needle construction parameters");
        }
    }
}

RunResult run_experiment(const ExperimentConfig& config, const RunOptions& options,
                         std::ostream& log) {
    config.validate();
    fs::create_directories(config.output_dir);
    OutputSink sink{fs::path(config.output_dir), {}};

    if (config.experiment == "fidelity") {
        run_fidelity(config, options, sink, log);
    } else if (config.experiment == "crs") {
        run_crs(config, options, sink, log);
    } else if (config.experiment == "needle") {
        run_needle(config, options, sink, log);
    } else if (config.experiment == "retention") {
        run_retention(config, options, sink, log);
    } else if (config.experiment == "ablation") {
        run_ablation(config, options, sink, log);
    }

    json manifest;
    manifest["experiment"] = config.experiment;
    manifest["config"] = json::parse(config.to_json_text());
    manifest["files"] = sink.files;
    {
        std::ofstream out(fs::path(config.output_dir) / "manifest.json");
        out << manifest.dump(2) << '\n';
    }
    sink.files.push_back("manifest.json");
    return RunResult{sink.files};
}

}  // namespace laprox
