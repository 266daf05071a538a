// Copyright 2026 The GSE Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "gse/harness.hpp"

using Catch::Approx;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

struct Csv {
  std::vector<std::string> header;
  std::vector<std::map<std::string, std::string>> rows;
};

Csv parse_csv(const std::string& text) {
  Csv csv;
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) fields.push_back(cell);
    if (csv.header.empty()) {
      csv.header = fields;
      continue;
    }
    REQUIRE(fields.size() == csv.header.size());
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < fields.size(); ++i) row[csv.header[i]] = fields[i];
    csv.rows.push_back(std::move(row));
  }
  return csv;
}

int count_files_with_prefix(const std::string& dir, const std::string& prefix) {
  int count = 0;
  for (const fs::directory_entry& entry : fs::directory_iterator(dir)) {
    if (entry.path().filename().string().rfind(prefix, 0) == 0) ++count;
  }
  return count;
}

/// One small Latin experiment shared across test cases; built exactly once.
struct Artifacts {
  std::string root;
  std::string pool_path;
  gse::TestbedPool pool;
  gse::ExperimentPlan plan;
  gse::ExperimentOutcome outcome;
  gse::ExperimentOutcome rerun_outcome;
};

const Artifacts& shared_experiment() {
  static const Artifacts artifacts = [] {
    Artifacts a;
    a.root = (fs::temp_directory_path() / "gse_harness_scratch").string();
    fs::remove_all(a.root);
    fs::create_directories(a.root);

    gse::LatinPoolParams pool_params;
    pool_params.count = 12;
    pool_params.seed = 33;
    a.pool = gse::generate_latin_pool(pool_params);
    a.pool_path = a.root + "/pool.json";
    gse::save_pool(a.pool, a.pool_path);

    a.plan.pool_path = a.pool_path;
    a.plan.out_dir = a.root + "/run_a";
    a.plan.base.num_particles = 4;
    a.plan.base.outer_depth = 10;
    a.plan.base.inner_depth = 3;
    a.plan.base.sigma = 0.25;
    a.plan.base.beta = 0.25;
    a.plan.base.tau_ess = 0.3;
    a.plan.base.seed = 0;
    a.plan.guide.type = "oracle";
    a.plan.guide.kappa = 4.0;
    a.plan.axes.beta = {0.25, 0.5};
    a.plan.n_seeds = 2;
    a.plan.n_folds = 2;
    a.plan.validation_fraction = 0.1;
    a.outcome = gse::run_experiment(a.plan);

    gse::ExperimentPlan again = a.plan;
    again.out_dir = a.root + "/run_b";
    a.rerun_outcome = gse::run_experiment(again);
    return a;
  }();
  return artifacts;
}

}  // namespace

TEST_CASE("token strings round trip") {
  const gse::TokenGrid grid{{3, 1, 4, 2}, 4};
  CHECK(gse::tokens_to_string(grid) == "3142");
  CHECK(gse::tokens_from_string("3142", 4) == grid);
  CHECK_THROWS_AS(gse::tokens_from_string("05", 4), gse::ConfigError);
  CHECK_THROWS_AS(gse::tokens_to_string(gse::TokenGrid{{1}, 10}), gse::ConfigError);
}

TEST_CASE("guide construction validates its inputs") {
  const gse::ArgmaxDecoder decoder{4};
  gse::GuideConfig config;
  config.type = "oracle";
  CHECK_THROWS_AS(gse::build_guide(config, std::nullopt, decoder), gse::ConfigError);
  config.type = "mystery";
  CHECK_THROWS_AS(gse::build_guide(config, std::nullopt, decoder), gse::ConfigError);
  config.type = "flat";
  CHECK(gse::build_guide(config, std::nullopt, decoder).name.find("flat") !=
        std::string::npos);
}

TEST_CASE("traces round trip through the line format") {
  gse::LatinPoolParams pool_params;
  pool_params.count = 1;
  const gse::TestbedPool pool = gse::generate_latin_pool(pool_params);
  gse::InferenceConfig config;
  config.num_particles = 3;
  config.outer_depth = 5;
  config.inner_depth = 2;
  config.beta = 1.0;
  config.tau_ess = 0.6;
  const gse::TaskInstance task = pool.task_for(0);
  const gse::GuideSpec guide =
      gse::build_guide(gse::GuideConfig{}, task.solution, pool.decoder());
  gse::RunOptions options;
  options.track_deviations = true;
  const gse::RunResult result = gse::run_guided_inference(
      config, pool.backbone_for(0), guide, pool.decoder(), task, options);

  gse::TraceMeta meta;
  meta.run_id = "roundtrip";
  meta.kind = "guided";
  meta.instance = 0;
  meta.instance_id = task.instance_id;
  meta.fold = 1;
  meta.point = "testpoint";
  meta.config = config;
  meta.guide = gse::GuideConfig{};

  const std::string path =
      (fs::temp_directory_path() / "gse_trace_roundtrip.jsonl").string();
  gse::write_trace(path, meta, result.trace, result.answer);
  const gse::LoadedTrace loaded = gse::load_trace(path, pool.num_classes());

  CHECK(loaded.meta.run_id == meta.run_id);
  CHECK(loaded.meta.kind == meta.kind);
  CHECK(loaded.meta.instance_id == meta.instance_id);
  CHECK(loaded.meta.fold == meta.fold);
  CHECK(loaded.meta.point == meta.point);
  CHECK(loaded.meta.config.num_particles == config.num_particles);
  CHECK(loaded.meta.config.seed == config.seed);
  CHECK(loaded.answer == result.answer);
  REQUIRE(loaded.trace.steps.size() == result.trace.steps.size());
  for (std::size_t n = 0; n < loaded.trace.steps.size(); ++n) {
    const gse::StepRecord& in = result.trace.steps[n];
    const gse::StepRecord& out = loaded.trace.steps[n];
    CHECK(out.step == in.step);
    CHECK(out.guide_scores == in.guide_scores);
    CHECK(out.log_weights == in.log_weights);
    CHECK(out.ess_ratio == in.ess_ratio);
    CHECK(out.resampled == in.resampled);
    CHECK(out.ancestors == in.ancestors);
    CHECK(out.weight_reset == in.weight_reset);
    CHECK(out.inner_deviation_sq == in.inner_deviation_sq);
    REQUIRE(out.decodes.size() == in.decodes.size());
    for (std::size_t s = 0; s < out.decodes.size(); ++s) {
      CHECK(out.decodes[s] == in.decodes[s]);
    }
  }
  fs::remove(path);
}

TEST_CASE("plans round trip through JSON") {
  gse::ExperimentPlan plan;
  plan.pool_path = "pool.json";
  plan.out_dir = "out";
  plan.base.num_particles = 32;
  plan.base.sigma = 0.15;
  plan.base.seed = 7;
  plan.guide.type = "flat";
  plan.guide.level = 0.5;
  plan.axes.sigma = {0.1, 0.2};
  plan.axes.particles = {8, 16};
  plan.axes.resample = {0, 1};
  plan.n_seeds = 3;
  plan.n_folds = 4;
  plan.validation_fraction = 0.2;
  plan.workers = 2;
  plan.track_deviations = true;
  const gse::ExperimentPlan loaded = gse::plan_from_json(gse::plan_to_json(plan));
  CHECK(loaded.pool_path == plan.pool_path);
  CHECK(loaded.out_dir == plan.out_dir);
  CHECK(loaded.base.num_particles == 32);
  CHECK(loaded.base.sigma == 0.15);
  CHECK(loaded.base.seed == 7);
  CHECK(loaded.guide.type == "flat");
  CHECK(loaded.guide.level == 0.5);
  CHECK(loaded.axes.sigma == plan.axes.sigma);
  CHECK(loaded.axes.particles == plan.axes.particles);
  CHECK(loaded.axes.resample == plan.axes.resample);
  CHECK(loaded.n_seeds == 3);
  CHECK(loaded.n_folds == 4);
  CHECK(loaded.validation_fraction == 0.2);
  CHECK(loaded.workers == 2);
  CHECK(loaded.track_deviations);
}

TEST_CASE("a minimal plan fills omitted keys with defaults") {
  const nlohmann::json j = {
      {"pool", "p.json"},
      {"out_dir", "out"},
      {"config", {{"S", 8}, {"sigma", 0.1}}},
      {"guide", {{"type", "oracle"}, {"kappa", 2.0}}},
  };
  const gse::ExperimentPlan plan = gse::plan_from_json(j);
  CHECK(plan.base.num_particles == 8);
  CHECK(plan.base.sigma == 0.1);
  CHECK(plan.base.outer_depth == gse::InferenceConfig{}.outer_depth);
  CHECK(plan.base.tau_ess == gse::InferenceConfig{}.tau_ess);
  CHECK(plan.base.resample);
  CHECK(plan.guide.kappa == 2.0);
  CHECK(plan.guide.level == gse::GuideConfig{}.level);
  CHECK(plan.guide.jitter == gse::GuideConfig{}.jitter);
  CHECK(plan.n_seeds == gse::ExperimentPlan{}.n_seeds);
}

TEST_CASE("sweep points expand as a cartesian product with base defaults") {
  gse::ExperimentPlan plan;
  plan.pool_path = "p";
  plan.out_dir = "o";
  plan.base.sigma = 0.25;
  plan.base.beta = 0.5;
  plan.base.tau_ess = 0.3;
  plan.base.num_particles = 16;
  const std::vector<gse::ConfigPoint> defaults = gse::expand_points(plan);
  REQUIRE(defaults.size() == 1);
  CHECK(defaults[0].sigma == 0.25);
  CHECK(defaults[0].beta == 0.5);
  CHECK(defaults[0].particles == 16);
  CHECK(defaults[0].label() == "S16_sig0.25_beta0.5_tau0.3_rs1");
  CHECK(defaults[0].unguided_label() == "S16_sig0.25_tau0.3_rs1");

  plan.axes.sigma = {0.1, 0.2};
  plan.axes.beta = {0.0, 0.25, 1.0};
  plan.axes.particles = {4, 8};
  const std::vector<gse::ConfigPoint> grid = gse::expand_points(plan);
  CHECK(grid.size() == 12);
}

TEST_CASE("fold assignment reserves leading instances for validation") {
  const std::vector<int> folds = gse::assign_folds(20, 3, 0.1);
  REQUIRE(folds.size() == 20);
  CHECK(folds[0] == -1);
  CHECK(folds[1] == -1);
  for (std::size_t i = 2; i < 20; ++i) {
    CHECK(folds[i] == static_cast<int>((i - 2) % 3));
  }
  CHECK(gse::assign_folds(5, 2, 0.0) == std::vector<int>{0, 1, 0, 1, 0});
  CHECK_THROWS_AS(gse::assign_folds(0, 2, 0.1), gse::ConfigError);
  CHECK_THROWS_AS(gse::assign_folds(2, 2, 0.9), gse::ConfigError);
}

TEST_CASE("an experiment runs end to end and its summary verifies") {
  const Artifacts& a = shared_experiment();
  CHECK(a.outcome.exit_code == 0);
  CHECK(a.outcome.failed_runs == 0);
  REQUIRE(fs::exists(a.outcome.summary_path));
  REQUIRE(fs::exists(a.outcome.trace_dir));
  REQUIRE(fs::exists(a.plan.out_dir + "/plan.json"));

  // Two beta points share one set of unguided comparison runs.
  CHECK(count_files_with_prefix(a.outcome.trace_dir, "g_") == 2 * 2 * 12);
  CHECK(count_files_with_prefix(a.outcome.trace_dir, "u_") == 2 * 12);
  CHECK(count_files_with_prefix(a.outcome.trace_dir, "b_") == 12);

  const Csv csv = parse_csv(read_file(a.outcome.summary_path));
  REQUIRE(csv.header.size() == 16);
  CHECK(csv.header[0] == "point");
  CHECK(csv.header[1] == "split");
  REQUIRE(csv.rows.size() == 6);  // two points, three splits each
  for (const auto& row : csv.rows) {
    const double guided = std::stod(row.at("guided_mean"));
    const double unguided = std::stod(row.at("unguided_mean"));
    const double oracle = std::stod(row.at("oracle_mean"));
    const double det = std::stod(row.at("det_rate"));
    CHECK(guided >= 0.0);
    CHECK(guided <= 1.0);
    CHECK(unguided >= 0.0);
    CHECK(unguided <= 1.0);
    CHECK(det >= 0.0);
    CHECK(det <= 1.0);
    // A solved run always counts toward the oracle rate as well.
    CHECK(oracle >= guided - 1e-12);
    CHECK(row.at("S") == "4");
  }
  const auto& df_row = csv.rows[2];
  CHECK(df_row.at("split") == "df");
  CHECK(std::stod(df_row.at("det_rate")) == 0.0);

  const gse::VerifyOutcome verified =
      gse::verify_summary(a.outcome.summary_path, a.pool, a.outcome.trace_dir);
  CHECK(verified.ok);
  CHECK(verified.diffs.empty());
}

TEST_CASE("reruns of the same plan are byte-identical") {
  const Artifacts& a = shared_experiment();
  CHECK(a.rerun_outcome.exit_code == 0);
  CHECK(read_file(a.outcome.summary_path) == read_file(a.rerun_outcome.summary_path));

  // Matching trace files agree byte for byte as well.
  std::vector<std::string> names;
  for (const fs::directory_entry& entry : fs::directory_iterator(a.outcome.trace_dir)) {
    names.push_back(entry.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  REQUIRE_FALSE(names.empty());
  for (const std::string& name : names) {
    CHECK(read_file(a.outcome.trace_dir + "/" + name) ==
          read_file(a.rerun_outcome.trace_dir + "/" + name));
  }
}

TEST_CASE("tampered summaries fail verification") {
  const Artifacts& a = shared_experiment();
  const std::string tampered = a.root + "/tampered.csv";
  std::string text = read_file(a.outcome.summary_path);
  const std::size_t digit = text.find_last_of("0123456789");
  REQUIRE(digit != std::string::npos);
  text[digit] = text[digit] == '9' ? '8' : '9';
  {
    std::ofstream out(tampered, std::ios::binary);
    out << text;
  }
  const gse::VerifyOutcome verified =
      gse::verify_summary(tampered, a.pool, a.outcome.trace_dir);
  CHECK_FALSE(verified.ok);
  CHECK_FALSE(verified.diffs.empty());
}

TEST_CASE("a noiseless single-particle plan reproduces the deterministic rate") {
  const Artifacts& a = shared_experiment();
  gse::ExperimentPlan plan;
  plan.pool_path = a.pool_path;
  plan.out_dir = a.root + "/run_det";
  plan.base.num_particles = 1;
  plan.base.outer_depth = 10;
  plan.base.inner_depth = 3;
  plan.base.sigma = 0.0;
  plan.base.beta = 0.0;
  plan.n_seeds = 1;
  plan.n_folds = 1;
  plan.validation_fraction = 0.0;
  const gse::ExperimentOutcome outcome = gse::run_experiment(plan);
  REQUIRE(outcome.exit_code == 0);
  const Csv csv = parse_csv(read_file(outcome.summary_path));
  for (const auto& row : csv.rows) {
    if (row.at("split") != "test") continue;
    CHECK(row.at("guided_mean") == row.at("det_rate"));
    CHECK(row.at("unguided_mean") == row.at("det_rate"));
    CHECK(row.at("oracle_mean") == row.at("det_rate"));
  }
}

TEST_CASE("diagnostics and the report render from traces") {
  const Artifacts& a = shared_experiment();
  const std::string diag_dir = a.root + "/diag";
  gse::DiagnoseOptions options;
  options.tube_instances = 2;
  options.tube_rollouts = 128;
  REQUIRE(gse::diagnose(a.outcome.trace_dir, a.pool, diag_dir, options) == 0);
  CHECK(fs::exists(diag_dir + "/alignment.csv"));
  CHECK(fs::exists(diag_dir + "/entropy.csv"));
  CHECK(fs::exists(diag_dir + "/entropy_summary.json"));
  CHECK(fs::exists(diag_dir + "/tube.json"));
  CHECK(fs::exists(diag_dir + "/digest.md"));

  const Csv alignment = parse_csv(read_file(diag_dir + "/alignment.csv"));
  CHECK(alignment.rows.size() == 2 * 10);  // two points, ten steps each
  for (const auto& row : alignment.rows) {
    CHECK(std::stoi(row.at("n_runs")) == 2 * 12);
    const double bound = std::stod(row.at("shift_bound_max"));
    CHECK(bound >= 0.0);
  }

  const std::string report_path = a.root + "/report.md";
  REQUIRE(gse::write_report(a.outcome.summary_path, diag_dir, report_path) == 0);
  const std::string report = read_file(report_path);
  CHECK(report.find("| point |") != std::string::npos);
  CHECK(report.find("Diagnostics digest") != std::string::npos);
}
