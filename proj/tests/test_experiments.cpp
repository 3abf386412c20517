#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "gvn/experiments.hpp"
#include "gvn/io.hpp"

using namespace gvn;
namespace fs = std::filesystem;

namespace {

std::string fresh_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir.string();
}

const char* kTwoBallSpec = R"({
  "epsilon": 0.0,
  "conditional_perturbation": {"type": "none"},
  "regions": [
    {"center": [0.0, 0.0], "radius": 1.0, "conditional": [1.0, 0.0], "weight": 0.5},
    {"center": [2.5, 0.0], "radius": 1.0, "conditional": [0.0, 1.0], "weight": 0.5}
  ]
})";

}  // namespace

TEST_CASE("generate runs deterministically byte for byte") {
  const std::string base = fresh_dir("gvn_exp_gen");
  write_text_file(base + "/spec.json", kTwoBallSpec);
  const std::string config = R"({
    "kind": "generate", "seed": 7,
    "data": {"n": 100, "region_spec": "spec.json"}
  })";
  const RunOutcome a = run_experiment_text(config, base, base + "/out_a", std::nullopt);
  const RunOutcome b = run_experiment_text(config, base, base + "/out_b", std::nullopt);
  CHECK(a.passed());
  CHECK(a.metrics.at("n") == 100);
  CHECK(read_text_file(base + "/out_a/dataset.csv") == read_text_file(base + "/out_b/dataset.csv"));

  // A different seed produces different bytes.
  const RunOutcome c = run_experiment_text(config, base, base + "/out_c", 8);
  CHECK(read_text_file(base + "/out_a/dataset.csv") != read_text_file(base + "/out_c/dataset.csv"));
  fs::remove_all(base);
}

TEST_CASE("construct maps a patch-condition violation to exit status 2") {
  const std::string base = fresh_dir("gvn_exp_patch");
  // Identical patterns on identical coordinates.
  write_text_file(base + "/bad_patch.json", R"({
    "p": 4, "delta": 0.0,
    "regions": [
      {"coords": [0, 1], "pattern": [1.0, 0.0]},
      {"coords": [0, 1], "pattern": [1.0, 0.0]}
    ]
  })");
  write_text_file(base + "/config.json", R"({
    "kind": "construct", "seed": 1,
    "out": ")" + base + R"(/out",
    "layer": {"separator": "conv", "patch_spec": "bad_patch.json"}
  })");
  std::ostringstream log;
  const int status = run_config_file(base + "/config.json", std::nullopt, std::nullopt, log);
  CHECK(status == 2);
  CHECK(log.str().find("patch condition") != std::string::npos);
  CHECK(log.str().find("(1, 2)") != std::string::npos);
  fs::remove_all(base);
}

TEST_CASE("expected construction errors succeed as assertions") {
  const std::string base = fresh_dir("gvn_exp_expect");
  const std::string config = R"({
    "kind": "construct", "seed": 1,
    "layer": {"separator": "relu", "bias_mode": "full_norm",
              "representatives": [[1, 0], [0, 1]]},
    "expect_error": "code_collision"
  })";
  const RunOutcome outcome = run_experiment_text(config, base, base + "/out", std::nullopt);
  CHECK(outcome.passed());
  CHECK(outcome.metrics.at("expected_error_seen") == 1.0);

  // The same construction without the expectation throws.
  const std::string plain = R"({
    "kind": "construct", "seed": 1,
    "layer": {"separator": "relu", "bias_mode": "full_norm",
              "representatives": [[1, 0], [0, 1]]}
  })";
  CHECK_THROWS_AS(run_experiment_text(plain, base, base + "/out2", std::nullopt),
                  std::invalid_argument);
  fs::remove_all(base);
}

TEST_CASE("sweep emits one aggregate row per width") {
  const std::string base = fresh_dir("gvn_exp_sweep");
  write_text_file(base + "/spec.json", kTwoBallSpec);
  const std::string config = R"({
    "kind": "sweep", "seed": 5, "metric": "gap",
    "data": {"n": 200, "region_spec": "spec.json"},
    "num_seeds": 2,
    "m_list": [4, 16, 64],
    "layers": [{"name": "relu_inner_product"}]
  })";
  const RunOutcome outcome = run_experiment_text(config, base, base + "/out", std::nullopt);
  CHECK(outcome.passed());
  const std::string sweep = read_text_file(base + "/out/sweep_relu_inner_product.csv");
  std::istringstream lines(sweep);
  std::string line;
  int rows = 0;
  std::getline(lines, line);
  CHECK(line == "m,l2_gap,noise_floor,collision_fraction");
  while (std::getline(lines, line)) {
    if (!line.empty()) ++rows;
  }
  CHECK(rows == 3);
  CHECK(fs::exists(base + "/out/plot_relu_inner_product.csv"));
  CHECK(fs::exists(base + "/out/sweep_seeds.csv"));
  fs::remove_all(base);
}

TEST_CASE("evaluate produces the report artifacts") {
  const std::string base = fresh_dir("gvn_exp_eval");
  write_text_file(base + "/spec.json", kTwoBallSpec);
  const std::string config = R"({
    "kind": "evaluate", "seed": 3,
    "data": {"n": 300, "region_spec": "spec.json"},
    "layer": {"separator": "linear", "representatives": "region_centers"},
    "assertions": {"max_cross_region_fraction": 1e-3}
  })";
  const RunOutcome outcome = run_experiment_text(config, base, base + "/out", std::nullopt);
  CHECK(outcome.passed());
  CHECK(fs::exists(base + "/out/dataset.csv"));
  CHECK(fs::exists(base + "/out/layer.json"));
  CHECK(fs::exists(base + "/out/gap_report.csv"));
  CHECK(fs::exists(base + "/out/separation_report.csv"));
  CHECK(outcome.metrics.at("cross_region_fraction") == 0.0);
  fs::remove_all(base);
}

TEST_CASE("run_config_file enforces the kind/subcommand match and flags bad configs") {
  const std::string base = fresh_dir("gvn_exp_cli");
  write_text_file(base + "/config.json", R"({"kind": "generate", "seed": 1,
    "data": {"n": 10, "uniform_box": {"p": 2}}, "out": ")" + base + R"(/out"})");
  std::ostringstream log;
  CHECK(run_config_file(base + "/config.json", std::nullopt, std::nullopt, log,
                        std::string("evaluate")) == 2);
  CHECK(run_config_file(base + "/config.json", std::nullopt, std::nullopt, log,
                        std::string("generate")) == 0);
  CHECK(run_config_file(base + "/missing.json", std::nullopt, std::nullopt, log) == 2);

  write_text_file(base + "/broken.json", "{\"kind\": \"generate\"");
  CHECK(run_config_file(base + "/broken.json", std::nullopt, std::nullopt, log) == 2);

  // Failing assertion exits 1 and names the metric.
  write_text_file(base + "/fail.json", R"({"kind": "evaluate", "seed": 2,
    "data": {"n": 50, "uniform_box": {"p": 2}},
    "raw": true, "gap": false, "collision_tolerance": 1e0,
    "out": ")" + base + R"(/fail_out",
    "assertions": {"max_collision_pairs": 0}})");
  std::ostringstream fail_log;
  CHECK(run_config_file(base + "/fail.json", std::nullopt, std::nullopt, fail_log) == 1);
  CHECK(fail_log.str().find("collision_pairs") != std::string::npos);
  fs::remove_all(base);
}
