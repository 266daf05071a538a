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

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gse/backbone.hpp"
#include "gse/errors.hpp"
#include "gse/latin.hpp"
#include "gse/rng.hpp"
#include "gse/state.hpp"

namespace gse {

/// Synthetic pool built on the affine contraction backbone. Instances have
/// random prompts and starting states; the ground-truth answer is stamped at
/// generation time as the decode the noise-free recursion reaches at the
/// recorded depth, so the deterministic baseline solves every instance by
/// construction.
struct AffinePoolParams {
  int rows = 4;
  int cols = 4;
  double rho = 0.7;
  double x_scale = 1.0;
  double h0_scale = 1.0;
  int count = 50;
  std::uint64_t seed = 1;
  int outer_depth = 48;  // depth used to stamp the solution
  int inner_depth = 6;
};

struct AffineInstance {
  std::uint32_t index = 0;
  std::string id;
  std::vector<double> x;
  std::vector<double> y0;
  std::vector<double> z0;
  TokenGrid solution;
};

/// A generated testbed: either Latin puzzles or affine tasks, plus everything
/// needed to rebuild each instance's backbone and task on demand.
struct TestbedPool {
  std::string testbed;  // "latin" or "affine"
  LatinPoolParams latin_params;
  std::vector<LatinInstance> latin;
  AffinePoolParams affine_params;
  std::vector<AffineInstance> affine;

  std::size_t size() const { return testbed == "latin" ? latin.size() : affine.size(); }

  int rows() const {
    return testbed == "latin" ? latin_params.latin.grid * latin_params.latin.grid
                              : affine_params.rows;
  }
  int cols() const {
    return testbed == "latin" ? latin_params.latin.grid : affine_params.cols;
  }
  int num_classes() const {
    return testbed == "latin" ? latin_params.latin.grid : affine_params.cols;
  }
  ArgmaxDecoder decoder() const { return ArgmaxDecoder{num_classes()}; }

  BackboneSpec backbone_for(std::size_t i) const {
    check_index(i);
    if (testbed == "latin") {
      return make_latin_backbone(latin_params.latin, latin[i].clue_cells,
                                 latin[i].clue_values);
    }
    return make_affine_backbone(affine_params.rho,
                                LatentTensor::zeros(affine_params.rows, affine_params.cols));
  }

  TaskInstance task_for(std::size_t i) const {
    check_index(i);
    if (testbed == "latin") return make_latin_task(latin_params.latin, latin[i]);
    const AffineInstance& inst = affine[i];
    TaskInstance task;
    task.x = LatentTensor(inst.x, affine_params.rows, affine_params.cols);
    task.h0.y = LatentTensor(inst.y0, affine_params.rows, affine_params.cols);
    task.h0.z = LatentTensor(inst.z0, affine_params.rows, affine_params.cols);
    task.solution = inst.solution;
    task.instance_id = inst.id;
    task.index = inst.index;
    return task;
  }

  const TokenGrid& solution_for(std::size_t i) const {
    check_index(i);
    return testbed == "latin" ? latin[i].solution : affine[i].solution;
  }

 private:
  void check_index(std::size_t i) const {
    if (i >= size()) throw ConfigError("TestbedPool: instance index out of range");
  }
};

inline TestbedPool generate_latin_pool(const LatinPoolParams& params) {
  TestbedPool pool;
  pool.testbed = "latin";
  pool.latin_params = params;
  pool.latin = generate_latin_instances(params);
  return pool;
}

inline TestbedPool generate_affine_pool(const AffinePoolParams& params) {
  if (params.count < 1) throw ConfigError("generate_affine_pool: count must be >= 1");
  if (params.rows < 1 || params.cols < 2) {
    throw ConfigError("generate_affine_pool: need rows >= 1 and cols >= 2");
  }
  TestbedPool pool;
  pool.testbed = "affine";
  pool.affine_params = params;
  const BackboneSpec backbone =
      make_affine_backbone(params.rho, LatentTensor::zeros(params.rows, params.cols));
  const ArgmaxDecoder decoder{params.cols};
  for (int i = 0; i < params.count; ++i) {
    CounterRng rng(params.seed, StreamDomain::kPoolGen, static_cast<std::uint32_t>(i), 1, 0);
    AffineInstance inst;
    inst.index = static_cast<std::uint32_t>(i);
    char id[32];
    std::snprintf(id, sizeof(id), "affine-%05d", i);
    inst.id = id;
    const LatentTensor x = scaled(gaussian_tensor(rng, params.rows, params.cols), params.x_scale);
    JointState h;
    h.y = scaled(gaussian_tensor(rng, params.rows, params.cols), params.h0_scale);
    h.z = scaled(gaussian_tensor(rng, params.rows, params.cols), params.h0_scale);
    inst.x = x.values;
    inst.y0 = h.y.values;
    inst.z0 = h.z.values;
    for (int n = 0; n < params.outer_depth; ++n) {
      h = outer_step(backbone, x, h, params.inner_depth);
    }
    inst.solution = decoder(h.y);
    pool.affine.push_back(std::move(inst));
  }
  return pool;
}

/// Exact-solve rate of the noise-free single-trajectory recursion over the
/// pool; the p_det figure quoted when a pool is generated.
inline double deterministic_solve_rate(const TestbedPool& pool, int outer_depth,
                                       int inner_depth) {
  if (pool.size() == 0) throw ConfigError("deterministic_solve_rate: empty pool");
  const ArgmaxDecoder decoder = pool.decoder();
  int solved = 0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const BackboneSpec backbone = pool.backbone_for(i);
    const TaskInstance task = pool.task_for(i);
    JointState h = task.h0;
    for (int n = 0; n < outer_depth; ++n) h = outer_step(backbone, task.x, h, inner_depth);
    if (decoder(h.y) == *task.solution) ++solved;
  }
  return static_cast<double>(solved) / static_cast<double>(pool.size());
}

namespace detail {

inline nlohmann::json latin_params_json(const LatinPoolParams& p) {
  return {{"grid", p.latin.grid},
          {"step_size", p.latin.step_size},
          {"clue_weight", p.latin.clue_weight},
          {"clue_scale", p.latin.clue_scale},
          {"count", p.count},
          {"min_clues", p.min_clues},
          {"max_clues", p.max_clues},
          {"seed", p.seed},
          {"probe_directions", p.probe_directions},
          {"probe_radius", p.probe_radius}};
}

inline LatinPoolParams latin_params_from_json(const nlohmann::json& j) {
  LatinPoolParams p;
  p.latin.grid = j.at("grid").get<int>();
  p.latin.step_size = j.at("step_size").get<double>();
  p.latin.clue_weight = j.at("clue_weight").get<double>();
  p.latin.clue_scale = j.at("clue_scale").get<double>();
  p.count = j.at("count").get<int>();
  p.min_clues = j.at("min_clues").get<int>();
  p.max_clues = j.at("max_clues").get<int>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.probe_directions = j.at("probe_directions").get<int>();
  p.probe_radius = j.at("probe_radius").get<double>();
  return p;
}

inline nlohmann::json affine_params_json(const AffinePoolParams& p) {
  return {{"rows", p.rows},         {"cols", p.cols},
          {"rho", p.rho},           {"x_scale", p.x_scale},
          {"h0_scale", p.h0_scale}, {"count", p.count},
          {"seed", p.seed},         {"outer_depth", p.outer_depth},
          {"inner_depth", p.inner_depth}};
}

inline AffinePoolParams affine_params_from_json(const nlohmann::json& j) {
  AffinePoolParams p;
  p.rows = j.at("rows").get<int>();
  p.cols = j.at("cols").get<int>();
  p.rho = j.at("rho").get<double>();
  p.x_scale = j.at("x_scale").get<double>();
  p.h0_scale = j.at("h0_scale").get<double>();
  p.count = j.at("count").get<int>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.outer_depth = j.at("outer_depth").get<int>();
  p.inner_depth = j.at("inner_depth").get<int>();
  return p;
}

}  // namespace detail

inline void save_pool(const TestbedPool& pool, const std::string& path) {
  nlohmann::json j;
  j["testbed"] = pool.testbed;
  if (pool.testbed == "latin") {
    j["params"] = detail::latin_params_json(pool.latin_params);
    nlohmann::json instances = nlohmann::json::array();
    for (const LatinInstance& inst : pool.latin) {
      instances.push_back({{"index", inst.index},
                           {"id", inst.id},
                           {"clue_cells", inst.clue_cells},
                           {"clue_values", inst.clue_values},
                           {"solution", inst.solution.tokens}});
    }
    j["instances"] = std::move(instances);
  } else if (pool.testbed == "affine") {
    j["params"] = detail::affine_params_json(pool.affine_params);
    nlohmann::json instances = nlohmann::json::array();
    for (const AffineInstance& inst : pool.affine) {
      instances.push_back({{"index", inst.index},
                           {"id", inst.id},
                           {"x", inst.x},
                           {"y0", inst.y0},
                           {"z0", inst.z0},
                           {"solution", inst.solution.tokens}});
    }
    j["instances"] = std::move(instances);
  } else {
    throw ConfigError("save_pool: unknown testbed " + pool.testbed);
  }
  std::ofstream out(path);
  if (!out) throw ConfigError("save_pool: cannot open " + path);
  out << j.dump(1, '\t') << "\n";
}

inline TestbedPool load_pool(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_pool: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("load_pool: malformed JSON in " + path + ": " + e.what());
  }
  TestbedPool pool;
  pool.testbed = j.at("testbed").get<std::string>();
  if (pool.testbed == "latin") {
    pool.latin_params = detail::latin_params_from_json(j.at("params"));
    const int classes = pool.latin_params.latin.grid;
    for (const nlohmann::json& ij : j.at("instances")) {
      LatinInstance inst;
      inst.index = ij.at("index").get<std::uint32_t>();
      inst.id = ij.at("id").get<std::string>();
      inst.clue_cells = ij.at("clue_cells").get<std::vector<int>>();
      inst.clue_values = ij.at("clue_values").get<std::vector<int>>();
      inst.solution = TokenGrid{ij.at("solution").get<std::vector<int>>(), classes};
      pool.latin.push_back(std::move(inst));
    }
  } else if (pool.testbed == "affine") {
    pool.affine_params = detail::affine_params_from_json(j.at("params"));
    const int classes = pool.affine_params.cols;
    for (const nlohmann::json& ij : j.at("instances")) {
      AffineInstance inst;
      inst.index = ij.at("index").get<std::uint32_t>();
      inst.id = ij.at("id").get<std::string>();
      inst.x = ij.at("x").get<std::vector<double>>();
      inst.y0 = ij.at("y0").get<std::vector<double>>();
      inst.z0 = ij.at("z0").get<std::vector<double>>();
      inst.solution = TokenGrid{ij.at("solution").get<std::vector<int>>(), classes};
      pool.affine.push_back(std::move(inst));
    }
  } else {
    throw ConfigError("load_pool: unknown testbed " + pool.testbed);
  }
  return pool;
}

}  // namespace gse
