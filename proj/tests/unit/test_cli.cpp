// SPDX-License-Identifier: Apache-2.0
//
// End-to-end checks of the installed command-line surface: subcommands, exit codes,
// and byte-reproducible outputs.

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef LAPROX_CLI_PATH
#error "LAPROX_CLI_PATH must point at the built CLI binary"
#endif

namespace fs = std::filesystem;

namespace {

int run_cli(const std::string& args) {
    const std::string command = std::string(LAPROX_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(command.c_str());
    return WEXITSTATUS(status);
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / "laprox_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

fs::path write_config(const fs::path& dir, const std::string& text) {
    const fs::path path = dir / "config.json";
    std::ofstream out(path);
    out << text;
    return path;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

}  // namespace

TEST_CASE("fidelity subcommand writes reports and reruns byte-identically") {
    const fs::path dir = fresh_dir("fidelity");
    const fs::path config = write_config(dir, R"({
      "version": 1,
      "experiment": "fidelity",
      "output_dir": ")" + (dir / "out").string() + R"(",
      "seeds": {"base": 1, "count": 3},
      "model": {"layers": 1, "heads": 2, "kv_heads": 2, "head_dim": 4},
      "seq_len": 40,
      "policies": [{"policy": "laprox", "window": 8}],
      "budgets": [16]
    })");
    CHECK(run_cli("fidelity -c " + config.string()) == 0);
    CHECK(fs::exists(dir / "out" / "fidelity.csv"));
    CHECK(fs::exists(dir / "out" / "manifest.json"));

    const std::string first = slurp(dir / "out" / "fidelity.csv");
    CHECK(run_cli("fidelity -c " + config.string() + " -j 2") == 0);
    CHECK(slurp(dir / "out" / "fidelity.csv") == first);
}

TEST_CASE("config errors exit with code 2 and leave no partial outputs") {
    const fs::path dir = fresh_dir("bad_budget");
    const fs::path config = write_config(dir, R"({
      "version": 1,
      "experiment": "fidelity",
      "output_dir": ")" + (dir / "out").string() + R"(",
      "seeds": [1],
      "model": {"layers": 1, "heads": 1, "kv_heads": 1, "head_dim": 4},
      "seq_len": 40,
      "policies": [{"policy": "laprox", "window": 32}],
      "budgets": [8]
    })");
    CHECK(run_cli("fidelity -c " + config.string()) == 2);
    CHECK_FALSE(fs::exists(dir / "out"));
}

TEST_CASE("unparseable configs exit with code 2") {
    const fs::path dir = fresh_dir("bad_json");
    const fs::path config = write_config(dir, "{ not json");
    CHECK(run_cli("crs -c " + config.string()) == 2);
}

TEST_CASE("subcommand and config experiment must agree") {
    const fs::path dir = fresh_dir("mismatch");
    const fs::path config = write_config(dir, R"({
      "version": 1,
      "experiment": "crs",
      "output_dir": ")" + (dir / "out").string() + R"(",
      "seeds": [1]
    })");
    CHECK(run_cli("needle -c " + config.string()) == 2);
}

TEST_CASE("policy filter narrows the run and rejects unknown names") {
    const fs::path dir = fresh_dir("filter");
    const fs::path config = write_config(dir, R"({
      "version": 1,
      "experiment": "fidelity",
      "output_dir": ")" + (dir / "out").string() + R"(",
      "seeds": [1],
      "model": {"layers": 1, "heads": 1, "kv_heads": 1, "head_dim": 4},
      "seq_len": 40,
      "policies": [{"policy": "laprox", "window": 8}, {"policy": "snapkv", "window": 8}],
      "budgets": [16]
    })");
    CHECK(run_cli("fidelity -c " + config.string() + " --policy laprox") == 0);
    const std::string csv = slurp(dir / "out" / "fidelity.csv");
    CHECK(csv.find("snapkv") == std::string::npos);
    CHECK(run_cli("fidelity -c " + config.string() + " --policy nonexistent") == 2);
}

TEST_CASE("seed override replaces the seed list") {
    const fs::path dir = fresh_dir("seed_override");
    const fs::path config = write_config(dir, R"({
      "version": 1,
      "experiment": "crs",
      "output_dir": ")" + (dir / "out").string() + R"(",
      "seeds": [1, 2, 3],
      "crs": {"trials": 5, "n_min": 5, "n_max": 6, "k_min": 1, "k_max": 2}
    })");
    CHECK(run_cli("crs -c " + config.string() + " --seed 9") == 0);
    const std::string manifest = slurp(dir / "out" / "manifest.json");
    CHECK(manifest.find("9") != std::string::npos);
}

TEST_CASE("missing subcommand or config is a usage error") {
    CHECK(run_cli("") == 2);
    CHECK(run_cli("fidelity") == 2);
    CHECK(run_cli("fidelity -c /nonexistent/config.json") == 2);
}
