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

#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gse/diagnostics.hpp"
#include "gse/errors.hpp"
#include "gse/filter.hpp"
#include "gse/pool.hpp"
#include "gse/trace.hpp"

namespace gse {

/// Sweep axes; an empty axis stays at the base config's value. The Cartesian
/// product of the non-empty axes defines the config points of a plan.
struct SweepAxes {
  std::vector<double> sigma;
  std::vector<double> beta;
  std::vector<double> tau_ess;
  std::vector<int> particles;  // "S"
  std::vector<int> resample;   // 0 or 1

  bool empty() const {
    return sigma.empty() && beta.empty() && tau_ess.empty() && particles.empty() &&
           resample.empty();
  }
};

/// One experiment: a pool, a base config, a guide, optional sweep axes, and
/// the seed-by-fold evaluation grid.
struct ExperimentPlan {
  std::string pool_path;
  std::string out_dir;
  InferenceConfig base;
  GuideConfig guide;
  SweepAxes axes;
  int n_seeds = 5;
  int n_folds = 5;
  double validation_fraction = 0.1;
  int workers = 1;
  bool track_deviations = false;

  void validate() const {
    base.validate();
    if (pool_path.empty()) throw ConfigError("ExperimentPlan: pool path missing");
    if (out_dir.empty()) throw ConfigError("ExperimentPlan: out_dir missing");
    if (n_seeds < 1) throw ConfigError("ExperimentPlan: n_seeds must be >= 1");
    if (n_folds < 1) throw ConfigError("ExperimentPlan: n_folds must be >= 1");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
      throw ConfigError("ExperimentPlan: validation_fraction must lie in [0, 1)");
    }
    if (workers < 1) throw ConfigError("ExperimentPlan: workers must be >= 1");
    for (int s : axes.particles) {
      if (s < 1) throw ConfigError("ExperimentPlan: S axis entries must be >= 1");
    }
    for (int r : axes.resample) {
      if (r != 0 && r != 1) throw ConfigError("ExperimentPlan: resample axis entries must be 0/1");
    }
  }
};

namespace detail {

inline std::string fmt_axis(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

inline std::string fmt_cell(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace detail

inline nlohmann::json plan_to_json(const ExperimentPlan& plan) {
  return {{"pool", plan.pool_path},
          {"out_dir", plan.out_dir},
          {"config", detail::config_json(plan.base)},
          {"guide", detail::guide_json(plan.guide)},
          {"axes",
           {{"sigma", plan.axes.sigma},
            {"beta", plan.axes.beta},
            {"tau_ess", plan.axes.tau_ess},
            {"S", plan.axes.particles},
            {"resample", plan.axes.resample}}},
          {"n_seeds", plan.n_seeds},
          {"n_folds", plan.n_folds},
          {"validation_fraction", plan.validation_fraction},
          {"workers", plan.workers},
          {"track_deviations", plan.track_deviations}};
}

inline ExperimentPlan plan_from_json(const nlohmann::json& j) {
  ExperimentPlan plan;
  plan.pool_path = j.at("pool").get<std::string>();
  plan.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("config")) plan.base = detail::config_from_json(j.at("config"));
  if (j.contains("guide")) plan.guide = detail::guide_from_json(j.at("guide"));
  if (j.contains("axes")) {
    const nlohmann::json& a = j.at("axes");
    if (a.contains("sigma")) plan.axes.sigma = a.at("sigma").get<std::vector<double>>();
    if (a.contains("beta")) plan.axes.beta = a.at("beta").get<std::vector<double>>();
    if (a.contains("tau_ess")) plan.axes.tau_ess = a.at("tau_ess").get<std::vector<double>>();
    if (a.contains("S")) plan.axes.particles = a.at("S").get<std::vector<int>>();
    if (a.contains("resample")) plan.axes.resample = a.at("resample").get<std::vector<int>>();
  }
  if (j.contains("n_seeds")) plan.n_seeds = j.at("n_seeds").get<int>();
  if (j.contains("n_folds")) plan.n_folds = j.at("n_folds").get<int>();
  if (j.contains("validation_fraction")) {
    plan.validation_fraction = j.at("validation_fraction").get<double>();
  }
  if (j.contains("workers")) plan.workers = j.at("workers").get<int>();
  if (j.contains("track_deviations")) {
    plan.track_deviations = j.at("track_deviations").get<bool>();
  }
  return plan;
}

inline ExperimentPlan load_plan(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_plan: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("load_plan: malformed JSON in " + path + ": " + e.what());
  }
  return plan_from_json(j);
}

inline void save_plan(const ExperimentPlan& plan, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("save_plan: cannot open " + path);
  out << plan_to_json(plan).dump(1, '\t') << "\n";
}

/// One vertex of the sweep grid.
struct ConfigPoint {
  double sigma = 0.0;
  double beta = 0.0;
  double tau_ess = 0.0;
  int particles = 0;
  bool resample = true;

  std::string label() const {
    return "S" + std::to_string(particles) + "_sig" + detail::fmt_axis(sigma) + "_beta" +
           detail::fmt_axis(beta) + "_tau" + detail::fmt_axis(tau_ess) +
           (resample ? "_rs1" : "_rs0");
  }

  /// Identity of the matching beta = 0 comparison runs; beta drops out.
  std::string unguided_label() const {
    return "S" + std::to_string(particles) + "_sig" + detail::fmt_axis(sigma) + "_tau" +
           detail::fmt_axis(tau_ess) + (resample ? "_rs1" : "_rs0");
  }

  InferenceConfig apply(InferenceConfig base) const {
    base.sigma = sigma;
    base.beta = beta;
    base.tau_ess = tau_ess;
    base.num_particles = particles;
    base.resample = resample;
    return base;
  }
};

inline std::string unguided_label_for(const InferenceConfig& config) {
  ConfigPoint point;
  point.sigma = config.sigma;
  point.tau_ess = config.tau_ess;
  point.particles = config.num_particles;
  point.resample = config.resample;
  return point.unguided_label();
}

inline std::vector<ConfigPoint> expand_points(const ExperimentPlan& plan) {
  const auto pick_d = [](const std::vector<double>& axis, double base) {
    return axis.empty() ? std::vector<double>{base} : axis;
  };
  const std::vector<double> sigmas = pick_d(plan.axes.sigma, plan.base.sigma);
  const std::vector<double> betas = pick_d(plan.axes.beta, plan.base.beta);
  const std::vector<double> taus = pick_d(plan.axes.tau_ess, plan.base.tau_ess);
  const std::vector<int> particle_counts =
      plan.axes.particles.empty() ? std::vector<int>{plan.base.num_particles}
                                  : plan.axes.particles;
  const std::vector<int> resamples = plan.axes.resample.empty()
                                         ? std::vector<int>{plan.base.resample ? 1 : 0}
                                         : plan.axes.resample;
  std::vector<ConfigPoint> points;
  for (int s : particle_counts) {
    for (double sigma : sigmas) {
      for (double beta : betas) {
        for (double tau : taus) {
          for (int r : resamples) {
            points.push_back(ConfigPoint{sigma, beta, tau, s, r != 0});
          }
        }
      }
    }
  }
  return points;
}

/// Splits a pool into a validation reserve (fold -1, the first instances) and
/// n_folds test folds assigned round-robin over the rest.
inline std::vector<int> assign_folds(std::size_t pool_size, int n_folds,
                                     double validation_fraction) {
  if (pool_size == 0) throw ConfigError("assign_folds: empty pool");
  const int n_val = static_cast<int>(std::floor(validation_fraction * pool_size + 0.5));
  if (static_cast<std::size_t>(n_val) >= pool_size) {
    throw ConfigError("assign_folds: validation reserve swallows the pool");
  }
  std::vector<int> fold(pool_size);
  for (std::size_t i = 0; i < pool_size; ++i) {
    fold[i] = (static_cast<int>(i) < n_val)
                  ? -1
                  : static_cast<int>((i - n_val) % static_cast<std::size_t>(n_folds));
  }
  return fold;
}

struct RunJob {
  TraceMeta meta;
  std::string path;
};

/// Expands a plan into the full run list: per config point, guided and
/// matched unguided (beta = 0) runs over every seed and instance, plus one
/// deterministic baseline run per instance. Unguided runs are shared between
/// config points that differ only in beta.
inline std::vector<RunJob> build_jobs(const ExperimentPlan& plan, const TestbedPool& pool,
                                      const std::string& trace_dir) {
  const std::vector<int> folds =
      assign_folds(pool.size(), plan.n_folds, plan.validation_fraction);
  const std::vector<ConfigPoint> points = expand_points(plan);
  std::vector<RunJob> jobs;
  std::set<std::string> seen;
  char suffix[64];
  for (const ConfigPoint& point : points) {
    for (int k = 0; k < plan.n_seeds; ++k) {
      const std::uint64_t seed = plan.base.seed + static_cast<std::uint64_t>(k);
      for (std::size_t i = 0; i < pool.size(); ++i) {
        std::snprintf(suffix, sizeof(suffix), "_s%d_i%05zu", k, i);
        RunJob guided;
        guided.meta.kind = "guided";
        guided.meta.point = point.label();
        guided.meta.run_id = "g_" + guided.meta.point + suffix;
        guided.meta.instance = static_cast<std::uint32_t>(i);
        guided.meta.instance_id = pool.testbed == "latin" ? pool.latin[i].id : pool.affine[i].id;
        guided.meta.fold = folds[i];
        guided.meta.config = point.apply(plan.base);
        guided.meta.config.seed = seed;
        guided.meta.guide = plan.guide;
        guided.path = trace_dir + "/" + guided.meta.run_id + ".jsonl";
        jobs.push_back(guided);

        RunJob unguided = guided;
        unguided.meta.kind = "unguided";
        unguided.meta.point = point.unguided_label();
        unguided.meta.run_id = "u_" + unguided.meta.point + suffix;
        unguided.meta.config.beta = 0.0;
        unguided.path = trace_dir + "/" + unguided.meta.run_id + ".jsonl";
        if (seen.insert(unguided.meta.run_id).second) jobs.push_back(unguided);
      }
    }
  }
  for (std::size_t i = 0; i < pool.size(); ++i) {
    std::snprintf(suffix, sizeof(suffix), "b_i%05zu", i);
    RunJob baseline;
    baseline.meta.kind = "baseline";
    baseline.meta.point = "baseline";
    baseline.meta.run_id = suffix;
    baseline.meta.instance = static_cast<std::uint32_t>(i);
    baseline.meta.instance_id = pool.testbed == "latin" ? pool.latin[i].id : pool.affine[i].id;
    baseline.meta.fold = folds[i];
    baseline.meta.config = plan.base;
    baseline.meta.config.num_particles = 1;
    baseline.meta.config.sigma = 0.0;
    baseline.meta.config.beta = 0.0;
    baseline.meta.guide = plan.guide;
    baseline.path = trace_dir + "/" + baseline.meta.run_id + ".jsonl";
    jobs.push_back(baseline);
  }
  return jobs;
}

inline void execute_job(const RunJob& job, const TestbedPool& pool, bool track_deviations) {
  const BackboneSpec backbone = pool.backbone_for(job.meta.instance);
  const TaskInstance task = pool.task_for(job.meta.instance);
  const ArgmaxDecoder decoder = pool.decoder();
  const GuideSpec guide = build_guide(job.meta.guide, task.solution, decoder);
  RunOptions options;
  options.track_deviations = track_deviations;
  const RunResult result =
      run_guided_inference(job.meta.config, backbone, guide, decoder, task, options);
  write_trace(job.path, job.meta, result.trace, result.answer);
}

/// Everything the summary needs from one parsed trace.
struct TraceDigest {
  TraceMeta meta;
  bool solved = false;
  bool oracle = false;
};

struct SummaryBuild {
  std::string csv;
  std::vector<std::string> problems;
};

/// Recomputes the summary CSV from trace files alone. Every number rederives
/// from step records (the stored final answers are only cross-checked), so
/// running this twice over the same traces is bitwise stable, and it is the
/// single code path behind both run_experiment and the verify subcommand.
inline SummaryBuild build_summary_csv(const TestbedPool& pool, const std::string& trace_dir) {
  namespace fs = std::filesystem;
  SummaryBuild build;
  std::vector<std::string> paths;
  for (const fs::directory_entry& entry : fs::directory_iterator(trace_dir)) {
    if (entry.path().extension() == ".jsonl") paths.push_back(entry.path().string());
  }
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw ConfigError("build_summary_csv: no trace files in " + trace_dir);

  std::map<std::uint32_t, bool> baseline_solved;
  std::map<std::uint32_t, int> fold_of;
  // kind -> point -> digests
  std::map<std::string, std::vector<TraceDigest>> guided_by_point;
  std::map<std::string, std::vector<TraceDigest>> unguided_by_point;
  std::map<std::string, InferenceConfig> point_config;

  for (const std::string& path : paths) {
    const LoadedTrace loaded = load_trace(path, pool.num_classes());
    const TokenGrid& solution = pool.solution_for(loaded.meta.instance);
    const TokenGrid reconstructed = map_answer_from_record(loaded.trace.steps.back());
    if (reconstructed != loaded.answer) {
      build.problems.push_back("final answer of " + loaded.meta.run_id +
                               " does not match its step records");
    }
    TraceDigest digest;
    digest.meta = loaded.meta;
    digest.solved = reconstructed == solution;
    digest.oracle = record_cloud_contains(loaded.trace.steps.back(), solution);
    fold_of[digest.meta.instance] = digest.meta.fold;
    if (digest.meta.kind == "baseline") {
      baseline_solved[digest.meta.instance] = digest.solved;
    } else if (digest.meta.kind == "guided") {
      guided_by_point[digest.meta.point].push_back(digest);
      point_config.emplace(digest.meta.point, digest.meta.config);
    } else if (digest.meta.kind == "unguided") {
      unguided_by_point[digest.meta.point].push_back(digest);
    } else {
      build.problems.push_back("unknown run kind in " + digest.meta.run_id);
    }
  }

  // Split membership: validation (fold -1), test (everything else), and the
  // deterministic-failure subset of test.
  const auto in_split = [&](std::uint32_t instance, const std::string& split) {
    const int fold = fold_of.at(instance);
    if (split == "val") return fold == -1;
    if (fold == -1) return false;
    if (split == "test") return true;
    const auto it = baseline_solved.find(instance);
    return it != baseline_solved.end() && !it->second;
  };

  const auto cell_rates = [&](const std::vector<TraceDigest>& digests,
                              const std::string& split, bool use_oracle) {
    // cell = (seed, fold); validation runs form per-seed cells.
    std::map<std::pair<std::uint64_t, int>, std::pair<int, int>> cells;
    for (const TraceDigest& d : digests) {
      if (!in_split(d.meta.instance, split)) continue;
      auto& cell = cells[{d.meta.config.seed, d.meta.fold}];
      cell.first += (use_oracle ? d.oracle : d.solved) ? 1 : 0;
      cell.second += 1;
    }
    std::vector<double> rates;
    for (const auto& [key, counts] : cells) {
      rates.push_back(static_cast<double>(counts.first) / counts.second);
    }
    return rates;
  };

  const auto mean_sd = [](const std::vector<double>& values) {
    if (values.empty()) return std::make_pair(0.0, 0.0);
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= values.size();
    if (values.size() < 2) return std::make_pair(mean, 0.0);
    double acc = 0.0;
    for (double v : values) acc += (v - mean) * (v - mean);
    return std::make_pair(mean, std::sqrt(acc / (values.size() - 1)));
  };

  std::ostringstream csv;
  csv << "point,split,S,sigma,beta,tau_ess,resample,n_instances,n_cells,det_rate,"
         "guided_mean,guided_sd,unguided_mean,unguided_sd,oracle_mean,oracle_sd\n";
  static const std::vector<std::string> kSplits = {"val", "test", "df"};
  for (const auto& [point, digests] : guided_by_point) {
    const InferenceConfig& config = point_config.at(point);
    const std::string unguided_key = unguided_label_for(config);
    const auto unguided_it = unguided_by_point.find(unguided_key);
    for (const std::string& split : kSplits) {
      int n_instances = 0;
      int det_solved = 0;
      for (const auto& [instance, fold] : fold_of) {
        if (!in_split(instance, split)) continue;
        ++n_instances;
        const auto it = baseline_solved.find(instance);
        if (it != baseline_solved.end() && it->second) ++det_solved;
      }
      const std::vector<double> guided = cell_rates(digests, split, false);
      const std::vector<double> oracle = cell_rates(digests, split, true);
      const std::vector<double> unguided =
          unguided_it == unguided_by_point.end()
              ? std::vector<double>{}
              : cell_rates(unguided_it->second, split, false);
      const auto [g_mean, g_sd] = mean_sd(guided);
      const auto [o_mean, o_sd] = mean_sd(oracle);
      const auto [u_mean, u_sd] = mean_sd(unguided);
      const double det_rate =
          n_instances == 0 ? 0.0 : static_cast<double>(det_solved) / n_instances;
      csv << point << ',' << split << ',' << config.num_particles << ','
          << detail::fmt_axis(config.sigma) << ',' << detail::fmt_axis(config.beta) << ','
          << detail::fmt_axis(config.tau_ess) << ',' << (config.resample ? 1 : 0) << ','
          << n_instances << ',' << guided.size() << ',' << detail::fmt_cell(det_rate) << ','
          << detail::fmt_cell(g_mean) << ',' << detail::fmt_cell(g_sd) << ','
          << detail::fmt_cell(u_mean) << ',' << detail::fmt_cell(u_sd) << ','
          << detail::fmt_cell(o_mean) << ',' << detail::fmt_cell(o_sd) << '\n';
    }
  }
  build.csv = csv.str();
  return build;
}

struct ExperimentOutcome {
  int exit_code = 0;
  int failed_runs = 0;
  std::string summary_path;
  std::string trace_dir;
  std::string message;
};

/// Executes a plan end to end: generates the run list, executes it across
/// workers (each run owns its RNG substreams and writes its own file),
/// builds the summary from the traces, and reports per-run failures without
/// aborting the rest of the grid.
inline ExperimentOutcome run_experiment(const ExperimentPlan& plan) {
  namespace fs = std::filesystem;
  plan.validate();
  const TestbedPool pool = load_pool(plan.pool_path);
  if (pool.size() == 0) throw ConfigError("run_experiment: pool is empty");
  const std::string trace_dir = plan.out_dir + "/traces";
  fs::create_directories(trace_dir);
  save_plan(plan, plan.out_dir + "/plan.json");

  const std::vector<RunJob> jobs = build_jobs(plan, pool, trace_dir);
  std::atomic<std::size_t> cursor{0};
  std::mutex failure_mutex;
  std::vector<std::string> failures;
  const auto worker = [&]() {
    for (;;) {
      const std::size_t k = cursor.fetch_add(1);
      if (k >= jobs.size()) break;
      try {
        execute_job(jobs[k], pool, plan.track_deviations);
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        failures.push_back(jobs[k].meta.run_id + ": " + e.what());
      }
    }
  };
  if (plan.workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < plan.workers; ++t) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
  }

  ExperimentOutcome outcome;
  outcome.trace_dir = trace_dir;
  outcome.failed_runs = static_cast<int>(failures.size());
  if (!failures.empty()) {
    std::sort(failures.begin(), failures.end());
    std::ofstream out(plan.out_dir + "/failures.txt");
    for (const std::string& f : failures) out << f << "\n";
  }
  const SummaryBuild build = build_summary_csv(pool, trace_dir);
  outcome.summary_path = plan.out_dir + "/summary.csv";
  {
    std::ofstream out(outcome.summary_path, std::ios::binary);
    if (!out) throw ConfigError("run_experiment: cannot write " + outcome.summary_path);
    out << build.csv;
  }
  outcome.failed_runs += static_cast<int>(build.problems.size());
  outcome.exit_code = outcome.failed_runs == 0 ? 0 : 1;
  if (outcome.exit_code != 0) {
    outcome.message = std::to_string(outcome.failed_runs) + " run(s) failed; see " +
                      plan.out_dir + "/failures.txt";
  }
  return outcome;
}

struct VerifyOutcome {
  bool ok = false;
  std::vector<std::string> diffs;
};

/// Recomputes the summary from traces and diffs it against the stored CSV,
/// byte for byte, also reporting any trace whose stored answer disagrees
/// with its own step records.
inline VerifyOutcome verify_summary(const std::string& summary_path, const TestbedPool& pool,
                                    const std::string& trace_dir) {
  VerifyOutcome outcome;
  const SummaryBuild build = build_summary_csv(pool, trace_dir);
  outcome.diffs = build.problems;
  std::ifstream in(summary_path, std::ios::binary);
  if (!in) throw ConfigError("verify_summary: cannot open " + summary_path);
  std::ostringstream stored_stream;
  stored_stream << in.rdbuf();
  const std::string stored = stored_stream.str();
  if (stored != build.csv) {
    std::istringstream a(stored), b(build.csv);
    std::string line_a, line_b;
    int line_no = 0;
    while (true) {
      const bool more_a = static_cast<bool>(std::getline(a, line_a));
      const bool more_b = static_cast<bool>(std::getline(b, line_b));
      if (!more_a && !more_b) break;
      ++line_no;
      if (!more_a) line_a = "<missing>";
      if (!more_b) line_b = "<missing>";
      if (line_a != line_b) {
        outcome.diffs.push_back("line " + std::to_string(line_no) + ": stored \"" + line_a +
                                "\" vs recomputed \"" + line_b + "\"");
        if (outcome.diffs.size() >= 20) break;
      }
    }
    if (outcome.diffs.empty()) outcome.diffs.push_back("summaries differ in whitespace only");
  }
  outcome.ok = outcome.diffs.empty();
  return outcome;
}

struct DiagnoseOptions {
  int tube_instances = 3;
  int tube_rollouts = 2000;
  std::vector<double> tube_alphas = {1.0, 2.0, 4.0};
};

/// Reads every guided trace and distills the alignment, spread, entropy, and
/// tube diagnostics into CSV/JSON files plus a human-readable digest with the
/// go/no-go readouts. Label-dependent outputs are skipped silently for runs
/// whose instances carry no ground truth (not the case for the built-in
/// testbeds, which always know their solutions).
inline int diagnose(const std::string& trace_dir, const TestbedPool& pool,
                    const std::string& out_dir, const DiagnoseOptions& options = {}) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::vector<std::string> paths;
  for (const fs::directory_entry& entry : fs::directory_iterator(trace_dir)) {
    if (entry.path().extension() == ".jsonl") paths.push_back(entry.path().string());
  }
  std::sort(paths.begin(), paths.end());

  std::map<std::string, std::vector<LoadedTrace>> guided;
  for (const std::string& path : paths) {
    LoadedTrace loaded = load_trace(path, pool.num_classes());
    if (loaded.meta.kind == "guided") {
      guided[loaded.meta.point].push_back(std::move(loaded));
    }
  }
  if (guided.empty()) throw ConfigError("diagnose: no guided traces in " + trace_dir);

  const int C = pool.num_classes();

  // Alignment and spread, pooled per point and step.
  struct StepAgg {
    int n_runs = 0;
    double p_sum = 0.0;
    double delta_sum = 0.0;
    int delta_defined = 0;
    double bound_sum = 0.0;
    double bound_max = 0.0;
  };
  std::ofstream alignment(out_dir + "/alignment.csv");
  alignment << "point,step,n_runs,p_mean,delta_mean,delta_defined,shift_bound_mean,"
               "shift_bound_max\n";
  std::map<std::string, double> worst_bound_by_point;
  std::map<std::string, double> best_delta_by_point;
  for (const auto& [point, traces] : guided) {
    const int depth = traces.front().meta.config.outer_depth;
    std::vector<StepAgg> agg(depth);
    for (const LoadedTrace& t : traces) {
      const TokenGrid& solution = pool.solution_for(t.meta.instance);
      for (int n = 0; n < depth; ++n) {
        const StepRecord& rec = t.trace.steps[n];
        const int S = static_cast<int>(rec.decodes.size());
        WeightVector w;
        w.w.resize(S);
        std::vector<std::uint8_t> success(S);
        std::vector<double> scores = rec.guide_scores;
        double p_hat = 0.0;
        for (int s = 0; s < S; ++s) {
          w.w[s] = std::exp(rec.log_weights[s]);
          success[s] = rec.decodes[s] == solution ? 1 : 0;
          if (success[s]) p_hat += w.w[s];
        }
        StepAgg& a = agg[n];
        a.n_runs += 1;
        a.p_sum += p_hat;
        const std::optional<double> delta = class_conditional_gap(scores, success, w);
        if (delta.has_value()) {
          a.delta_sum += *delta;
          a.delta_defined += 1;
        }
        const SpreadBound bound = q_spread_bound(scores, w, t.meta.config.beta);
        a.bound_sum += bound.bound;
        a.bound_max = std::max(a.bound_max, bound.bound);
      }
    }
    double worst_bound = 0.0;
    double best_delta = 0.0;
    for (int n = 0; n < depth; ++n) {
      const StepAgg& a = agg[n];
      const double p_mean = a.p_sum / a.n_runs;
      const double delta_mean = a.delta_defined ? a.delta_sum / a.delta_defined : 0.0;
      const double bound_mean = a.bound_sum / a.n_runs;
      alignment << point << ',' << (n + 1) << ',' << a.n_runs << ','
                << detail::fmt_cell(p_mean) << ',' << detail::fmt_cell(delta_mean) << ','
                << a.delta_defined << ',' << detail::fmt_cell(bound_mean) << ','
                << detail::fmt_cell(a.bound_max) << '\n';
      worst_bound = std::max(worst_bound, a.bound_max);
      if (a.delta_defined) best_delta = std::max(best_delta, delta_mean);
    }
    worst_bound_by_point[point] = worst_bound;
    best_delta_by_point[point] = best_delta;
  }
  alignment.close();

  // Token-level entropy and risk ranking.
  std::ofstream entropy_csv(out_dir + "/entropy.csv");
  entropy_csv << "point,instance,seed,position,terminal_H,aggregated_H,contraction,error\n";
  nlohmann::json entropy_summary = nlohmann::json::object();
  for (const auto& [point, traces] : guided) {
    std::vector<double> terminal_risk, aggregated_risk;
    std::vector<std::uint8_t> token_error;
    for (const LoadedTrace& t : traces) {
      const TokenGrid& solution = pool.solution_for(t.meta.instance);
      const TokenGrid answer = map_answer_from_record(t.trace.steps.back());
      const EntropyReport report = token_entropy(t.trace, {}, C);
      for (std::size_t l = 0; l < report.terminal.size(); ++l) {
        const bool error = answer.tokens[l] != solution.tokens[l];
        entropy_csv << point << ',' << t.meta.instance << ',' << t.meta.config.seed << ','
                    << l << ',' << detail::fmt_cell(report.terminal[l]) << ','
                    << detail::fmt_cell(report.aggregated[l]) << ','
                    << detail::fmt_cell(report.contraction[l]) << ',' << (error ? 1 : 0)
                    << '\n';
        terminal_risk.push_back(report.terminal[l]);
        aggregated_risk.push_back(report.aggregated[l]);
        token_error.push_back(error ? 1 : 0);
      }
    }
    nlohmann::json point_summary;
    point_summary["n_tokens"] = terminal_risk.size();
    CounterRng bootstrap_rng(0, StreamDomain::kShuffle, 0, 0, 0);
    const auto interval_json = [&](const std::vector<double>& risk) -> nlohmann::json {
      const std::optional<BootstrapInterval> ci =
          auroc_bootstrap(risk, token_error, 1000, bootstrap_rng);
      if (!ci.has_value()) return nullptr;
      return {{"auroc", ci->estimate}, {"lower", ci->lower}, {"upper", ci->upper},
              {"resamples", ci->resamples_used}};
    };
    point_summary["terminal_entropy"] = interval_json(terminal_risk);
    point_summary["aggregated_entropy"] = interval_json(aggregated_risk);
    std::vector<double> fractions;
    for (int d = 0; d < 10; ++d) fractions.push_back(d / 10.0);
    nlohmann::json abstention = nlohmann::json::array();
    for (const AbstentionPoint& p : abstention_curve(aggregated_risk, token_error, fractions)) {
      abstention.push_back({{"fraction", p.fraction},
                            {"error_rate", p.error_rate},
                            {"answered", p.answered}});
    }
    point_summary["abstention_on_aggregated"] = abstention;
    entropy_summary[point] = std::move(point_summary);
  }
  entropy_csv.close();
  {
    std::ofstream out(out_dir + "/entropy_summary.json");
    out << entropy_summary.dump(1, '\t') << "\n";
  }

  // Tube statistics on the first instances at the first point's sigma.
  nlohmann::json tube_json = nlohmann::json::array();
  const InferenceConfig& first_config = guided.begin()->second.front().meta.config;
  if (first_config.sigma > 0.0) {
    const int n_instances =
        std::min<int>(options.tube_instances, static_cast<int>(pool.size()));
    for (int i = 0; i < n_instances; ++i) {
      const BackboneSpec backbone = pool.backbone_for(i);
      const TaskInstance task = pool.task_for(i);
      const TubeReport report = tube_statistics(
          backbone, task.x, task.h0, first_config.inner_depth, first_config.sigma,
          options.tube_alphas, options.tube_rollouts, first_config.seed,
          static_cast<std::uint32_t>(i));
      nlohmann::json per_radius = nlohmann::json::array();
      for (const TubeRadiusStats& stats : report.per_radius) {
        per_radius.push_back({{"alpha", stats.alpha},
                              {"radius", stats.radius},
                              {"rho_probe", stats.rho_probe},
                              {"rho_used", stats.rho_used},
                              {"bound_applicable", stats.bound_applicable},
                              {"exit_probability", stats.exit_probability},
                              {"exit_se", stats.exit_se},
                              {"exit_bound", stats.exit_bound},
                              {"deviation_mean", stats.deviation_mean},
                              {"deviation_se", stats.deviation_se},
                              {"deviation_bound", stats.deviation_bound}});
      }
      tube_json.push_back({{"instance", i},
                           {"sigma", report.sigma},
                           {"inner_steps", report.inner_steps},
                           {"nu_squared", report.nu_squared},
                           {"n_rollouts", report.n_rollouts},
                           {"per_radius", per_radius}});
    }
  }
  {
    std::ofstream out(out_dir + "/tube.json");
    out << tube_json.dump(1, '\t') << "\n";
  }

  // Digest with the go/no-go readouts.
  std::ofstream digest(out_dir + "/digest.md");
  digest << "# Diagnostics digest\n\n";
  for (const auto& [point, traces] : guided) {
    const double beta = traces.front().meta.config.beta;
    const double bound = worst_bound_by_point[point];
    const double delta = best_delta_by_point[point];
    digest << "## " << point << "\n\n";
    digest << "- Guided runs: " << traces.size() << "\n";
    char line[160];
    std::snprintf(line, sizeof(line),
                  "- Tempering headroom: the spread bound at beta=%g caps the achievable "
                  "success-mass shift at %.3f%% per step.\n",
                  beta, 100.0 * bound);
    digest << line;
    digest << "- Verdict: "
           << (bound < 0.01 ? "tempering cannot improve success mass at this beta "
                              "(flat-guide regime)"
                            : "tempering has headroom to shift success mass")
           << "\n";
    std::snprintf(line, sizeof(line),
                  "- Best pooled class-conditional score gap over steps: %.4f %s\n", delta,
                  delta > 0.0 ? "(aligned)" : "(no alignment signal)");
    digest << line;
    const nlohmann::json& es = entropy_summary[point]["terminal_entropy"];
    if (!es.is_null()) {
      std::snprintf(line, sizeof(line),
                    "- Terminal-entropy risk AUROC: %.4f [%.4f, %.4f]\n",
                    es["auroc"].get<double>(), es["lower"].get<double>(),
                    es["upper"].get<double>());
      digest << line;
    }
    digest << "\n";
  }
  digest.close();
  return 0;
}

/// Renders the summary CSV and, when present, the diagnostics digest into a
/// single markdown report.
inline int write_report(const std::string& summary_path, const std::string& diagnostics_dir,
                        const std::string& out_path) {
  std::ifstream summary(summary_path);
  if (!summary) throw ConfigError("write_report: cannot open " + summary_path);
  std::ofstream out(out_path);
  if (!out) throw ConfigError("write_report: cannot write " + out_path);
  out << "# Experiment report\n\n## Summary\n\n";
  std::string line;
  bool first = true;
  while (std::getline(summary, line)) {
    if (line.empty()) continue;
    std::string row = "|";
    std::string field;
    std::istringstream fields(line);
    while (std::getline(fields, field, ',')) row += " " + field + " |";
    out << row << "\n";
    if (first) {
      std::string rule = "|";
      std::istringstream fields_again(line);
      while (std::getline(fields_again, field, ',')) rule += " --- |";
      out << rule << "\n";
      first = false;
    }
  }
  const std::string digest_path = diagnostics_dir + "/digest.md";
  std::ifstream digest(digest_path);
  if (digest) {
    out << "\n";
    out << digest.rdbuf();
  }
  return 0;
}

}  // namespace gse
