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

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gse/harness.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRunFailures = 1;
constexpr int kExitConfigError = 2;

struct ConfigOverrides {
  CLI::Option* S = nullptr;
  CLI::Option* N = nullptr;
  CLI::Option* M = nullptr;
  CLI::Option* sigma = nullptr;
  CLI::Option* beta = nullptr;
  CLI::Option* tau_ess = nullptr;
  CLI::Option* seed = nullptr;
  CLI::Option* resample = nullptr;
  CLI::Option* workers = nullptr;
  CLI::Option* out = nullptr;

  int s_value = 0;
  int n_value = 0;
  int m_value = 0;
  double sigma_value = 0.0;
  double beta_value = 0.0;
  double tau_value = 0.0;
  std::uint64_t seed_value = 0;
  int resample_value = 1;
  int workers_value = 1;
  std::string out_value;

  void attach(CLI::App* cmd) {
    S = cmd->add_option("--S", s_value, "Override particle count");
    N = cmd->add_option("--N", n_value, "Override outer depth");
    M = cmd->add_option("--M", m_value, "Override inner depth");
    sigma = cmd->add_option("--sigma", sigma_value, "Override noise scale");
    beta = cmd->add_option("--beta", beta_value, "Override inverse temperature");
    tau_ess = cmd->add_option("--tau_ess", tau_value, "Override ESS resampling threshold");
    seed = cmd->add_option("--seed", seed_value, "Override base seed");
    resample = cmd->add_option("--resample", resample_value, "Override resampling on/off (1/0)");
    workers = cmd->add_option("--workers", workers_value, "Override worker count");
    out = cmd->add_option("--out", out_value, "Override output directory");
  }

  void apply(gse::ExperimentPlan& plan) const {
    if (S->count()) plan.base.num_particles = s_value;
    if (N->count()) plan.base.outer_depth = n_value;
    if (M->count()) plan.base.inner_depth = m_value;
    if (sigma->count()) plan.base.sigma = sigma_value;
    if (beta->count()) plan.base.beta = beta_value;
    if (tau_ess->count()) plan.base.tau_ess = tau_value;
    if (seed->count()) plan.base.seed = seed_value;
    if (resample->count()) plan.base.resample = resample_value != 0;
    if (workers->count()) plan.workers = workers_value;
    if (out->count()) plan.out_dir = out_value;
    // The only environment override: the output directory.
    if (const char* env = std::getenv("GSE_OUT_DIR")) {
      if (*env != '\0') plan.out_dir = env;
    }
  }
};

int run_plan(const std::string& plan_path, const ConfigOverrides& overrides,
             bool require_axes) {
  gse::ExperimentPlan plan = gse::load_plan(plan_path);
  overrides.apply(plan);
  if (require_axes && plan.axes.empty()) {
    throw gse::ConfigError("sweep: the plan declares no sweep axes");
  }
  const gse::ExperimentOutcome outcome = gse::run_experiment(plan);
  std::ifstream summary(outcome.summary_path);
  std::cout << summary.rdbuf();
  std::cout << "summary: " << outcome.summary_path << "\n";
  std::cout << "traces:  " << outcome.trace_dir << "\n";
  if (outcome.exit_code != 0) std::cerr << outcome.message << "\n";
  return outcome.exit_code == 0 ? kExitOk : kExitRunFailures;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Guided stochastic exploration over recursive reasoning backbones"};
  app.require_subcommand(1);

  // generate
  auto* generate = app.add_subcommand("generate", "Generate a testbed pool");
  std::string gen_testbed = "latin";
  std::string gen_out = "pool.json";
  gse::LatinPoolParams latin_params;
  gse::AffinePoolParams affine_params;
  int gen_depth_n = 48;
  int gen_depth_m = 6;
  generate->add_option("--testbed", gen_testbed, "latin or affine")
      ->check(CLI::IsMember({"latin", "affine"}));
  generate->add_option("--out", gen_out, "Pool file to write");
  generate->add_option("--count", latin_params.count, "Number of instances");
  generate->add_option("--seed", latin_params.seed, "Generator seed");
  generate->add_option("--grid", latin_params.latin.grid, "Latin grid size (3 or 4)");
  generate->add_option("--min-clues", latin_params.min_clues, "Fewest clue cells");
  generate->add_option("--max-clues", latin_params.max_clues, "Most clue cells");
  generate->add_option("--step-size", latin_params.latin.step_size, "Descent step per application");
  generate->add_option("--clue-weight", latin_params.latin.clue_weight, "Clue tether strength");
  generate->add_option("--clue-scale", latin_params.latin.clue_scale, "Clue logit magnitude");
  generate->add_option("--rho", affine_params.rho, "Affine contraction factor");
  generate->add_option("--rows", affine_params.rows, "Affine latent rows");
  generate->add_option("--cols", affine_params.cols, "Affine latent cols");
  generate->add_option("--x-scale", affine_params.x_scale, "Affine prompt scale");
  generate->add_option("--h0-scale", affine_params.h0_scale, "Affine initial-state scale");
  generate->add_option("--N", gen_depth_n, "Outer depth for the deterministic probe");
  generate->add_option("--M", gen_depth_m, "Inner depth for the deterministic probe");

  // run / sweep
  auto* run = app.add_subcommand("run", "Execute an experiment plan");
  std::string run_plan_path;
  run->add_option("--plan", run_plan_path, "Plan file (JSON)")->required();
  ConfigOverrides run_overrides;
  run_overrides.attach(run);

  auto* sweep = app.add_subcommand("sweep", "Execute a plan with sweep axes");
  std::string sweep_plan_path;
  sweep->add_option("--plan", sweep_plan_path, "Plan file (JSON)")->required();
  ConfigOverrides sweep_overrides;
  sweep_overrides.attach(sweep);

  // diagnose
  auto* diagnose = app.add_subcommand("diagnose", "Distill diagnostics from traces");
  std::string diag_traces, diag_pool, diag_out = "diagnostics";
  gse::DiagnoseOptions diag_options;
  diagnose->add_option("--traces", diag_traces, "Trace directory")->required();
  diagnose->add_option("--pool", diag_pool, "Pool file")->required();
  diagnose->add_option("--out", diag_out, "Diagnostics output directory");
  diagnose->add_option("--tube-instances", diag_options.tube_instances,
                       "Instances to probe for tube statistics");
  diagnose->add_option("--tube-rollouts", diag_options.tube_rollouts,
                       "Monte Carlo rollouts per tube probe");

  // verify
  auto* verify = app.add_subcommand("verify", "Recompute a summary from traces and diff");
  std::string verify_summary_path, verify_traces, verify_pool;
  verify->add_option("--summary", verify_summary_path, "Summary CSV to check")->required();
  verify->add_option("--traces", verify_traces, "Trace directory")->required();
  verify->add_option("--pool", verify_pool, "Pool file")->required();

  // report
  auto* report = app.add_subcommand("report", "Render summary and diagnostics as markdown");
  std::string report_summary, report_diag = "diagnostics", report_out = "report.md";
  report->add_option("--summary", report_summary, "Summary CSV")->required();
  report->add_option("--diagnostics", report_diag, "Diagnostics directory");
  report->add_option("--out", report_out, "Report file to write");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfigError;
  }

  try {
    if (generate->parsed()) {
      gse::TestbedPool pool;
      if (gen_testbed == "latin") {
        pool = gse::generate_latin_pool(latin_params);
      } else {
        if (generate->count("--count")) affine_params.count = latin_params.count;
        if (generate->count("--seed")) affine_params.seed = latin_params.seed;
        affine_params.outer_depth = gen_depth_n;
        affine_params.inner_depth = gen_depth_m;
        pool = gse::generate_affine_pool(affine_params);
      }
      gse::save_pool(pool, gen_out);
      const double p_det = gse::deterministic_solve_rate(pool, gen_depth_n, gen_depth_m);
      std::cout << "pool: " << gen_out << "\n";
      std::cout << "instances: " << pool.size() << "\n";
      std::cout << "p_det: " << p_det << " (N=" << gen_depth_n << ", M=" << gen_depth_m
                << ")\n";
      return kExitOk;
    }
    if (run->parsed()) return run_plan(run_plan_path, run_overrides, false);
    if (sweep->parsed()) return run_plan(sweep_plan_path, sweep_overrides, true);
    if (diagnose->parsed()) {
      const gse::TestbedPool pool = gse::load_pool(diag_pool);
      gse::diagnose(diag_traces, pool, diag_out, diag_options);
      std::cout << "diagnostics: " << diag_out << "\n";
      return kExitOk;
    }
    if (verify->parsed()) {
      const gse::TestbedPool pool = gse::load_pool(verify_pool);
      const gse::VerifyOutcome outcome =
          gse::verify_summary(verify_summary_path, pool, verify_traces);
      if (outcome.ok) {
        std::cout << "verify: OK (summary matches traces)\n";
        return kExitOk;
      }
      std::cerr << "verify: MISMATCH\n";
      for (const std::string& diff : outcome.diffs) std::cerr << "  " << diff << "\n";
      return kExitRunFailures;
    }
    if (report->parsed()) {
      gse::write_report(report_summary, report_diag, report_out);
      std::cout << "report: " << report_out << "\n";
      return kExitOk;
    }
  } catch (const gse::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRunFailures;
  }
  return kExitConfigError;
}
