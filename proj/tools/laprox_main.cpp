// SPDX-License-Identifier: Apache-2.0
//
// Command-line front end: runs the eviction experiments from a JSON config and writes
// CSV reports plus a manifest. Exit codes: 0 success, 1 invariant violation or runtime
// failure, 2 configuration error.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "laprox/error.hpp"
#include "laprox/experiment.hpp"
#include "laprox/selfcheck.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string output_dir;
    std::optional<std::uint64_t> seed;
    std::size_t jobs = 1;
    std::vector<std::string> policy_filter;
};

void add_common_options(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("-c,--config", args.config_path, "Path to the JSON experiment config")
        ->required();
    cmd->add_option("-o,--output-dir", args.output_dir,
                    "Override the config's output directory");
    cmd->add_option("--seed", args.seed, "Override the config's seeds with a single seed");
    cmd->add_option("-j,--jobs", args.jobs, "Worker threads for seed fan-out")
        ->default_val(1);
    cmd->add_option("--policy", args.policy_filter,
                    "Run only the named policies (repeatable)");
}

int run_command(const std::string& experiment, const CommonArgs& args) {
    laprox::ExperimentConfig config = laprox::ExperimentConfig::from_file(args.config_path);
    if (config.experiment != experiment) {
        throw laprox::ConfigError("config declares experiment '" + config.experiment +
                                  "' but the '" + experiment + "' subcommand was invoked");
    }
    if (!args.output_dir.empty()) {
        config.output_dir = args.output_dir;
    }
    if (args.seed.has_value()) {
        config.seeds = {*args.seed};
    }
    if (!args.policy_filter.empty()) {
        std::vector<laprox::PolicyConfig> kept;
        for (const auto& policy : config.policies) {
            for (const auto& name : args.policy_filter) {
                if (laprox::to_string(policy.policy) == name) {
                    kept.push_back(policy);
                    break;
                }
            }
        }
        if (kept.empty()) {
            throw laprox::ConfigError("policy filter matched nothing");
        }
        config.policies = std::move(kept);
    }
    config.validate();

    const laprox::RunResult result =
        laprox::run_experiment(config, laprox::RunOptions{args.jobs}, std::cout);
    std::cout << "wrote " << result.files.size() << " files to " << config.output_dir << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"KV-cache eviction experiments: norm-product scoring, baselines, and "
                 "reproducible fidelity reports"};
    app.require_subcommand(1);

    const std::vector<std::string> experiments = {"fidelity", "crs", "needle", "retention",
                                                  "ablation"};
    std::vector<CommonArgs> args(experiments.size());
    for (std::size_t i = 0; i < experiments.size(); ++i) {
        CLI::App* cmd =
            app.add_subcommand(experiments[i], "Run the " + experiments[i] + " experiment");
        add_common_options(cmd, args[i]);
    }

    std::uint64_t selftest_seed = 7;
    CLI::App* selftest =
        app.add_subcommand("selftest", "Run the structural invariant suite end-to-end");
    selftest->add_option("--seed", selftest_seed, "Base seed for the randomized checks")
        ->default_val(7);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (selftest->parsed()) {
            const auto results = laprox::selfcheck::run_selftest(selftest_seed, std::cout);
            bool all_passed = true;
            for (const auto& result : results) {
                all_passed = all_passed && result.passed;
            }
            std::cout << (all_passed ? "selftest passed" : "selftest FAILED") << " ("
                      << results.size() << " checks)\n";
            return all_passed ? 0 : 1;
        }
        for (std::size_t i = 0; i < experiments.size(); ++i) {
            if (app.get_subcommand(experiments[i])->parsed()) {
                return run_command(experiments[i], args[i]);
            }
        }
    } catch (const laprox::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
