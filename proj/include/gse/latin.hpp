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

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gse/backbone.hpp"
#include "gse/errors.hpp"
#include "gse/rng.hpp"
#include "gse/state.hpp"

namespace gse {

/// Latin-square completion testbed on a G x G grid, G in {3, 4}. Each of the
/// L = G^2 cells carries a logit vector over the C = G symbols; the latent
/// shape is (L, C). The energy is the expected number of symbol collisions
/// within rows and columns under per-cell softmax marginals, plus a quadratic
/// tether that pins clue cells to their given symbol. One backbone
/// application is a single gradient-descent step on this energy, so iterating
/// the backbone relaxes the grid toward a feasible completion.
struct LatinParams {
  int grid = 4;
  double step_size = 0.1;    // gradient step per backbone application
  double clue_weight = 1.0;  // tether strength on clue cells
  double clue_scale = 3.0;   // target logit magnitude for the clue symbol
};

class LatinEnergy {
 public:
  LatinEnergy(const LatinParams& params, std::vector<int> clue_cells,
              std::vector<int> clue_values)
      : params_(params),
        clue_cells_(std::move(clue_cells)),
        clue_values_(std::move(clue_values)) {
    if (params_.grid != 3 && params_.grid != 4) {
      throw ConfigError("LatinEnergy: grid must be 3 or 4");
    }
    if (!(params_.step_size > 0.0)) {
      throw ConfigError("LatinEnergy: step_size must be positive");
    }
    if (clue_cells_.size() != clue_values_.size()) {
      throw ConfigError("LatinEnergy: clue cells and values differ in length");
    }
    const int g = params_.grid;
    const int cells = g * g;
    is_clue_.assign(cells, 0);
    clue_symbol_.assign(cells, 0);
    for (std::size_t i = 0; i < clue_cells_.size(); ++i) {
      const int cell = clue_cells_[i];
      const int value = clue_values_[i];
      if (cell < 0 || cell >= cells) throw ConfigError("LatinEnergy: clue cell out of range");
      if (value < 1 || value > g) throw ConfigError("LatinEnergy: clue value out of range");
      if (is_clue_[cell]) throw ConfigError("LatinEnergy: duplicate clue cell");
      is_clue_[cell] = 1;
      clue_symbol_[cell] = value;
    }
    // Row and column mates of each cell, 2 * (G - 1) neighbors apiece.
    neighbors_.assign(cells, {});
    for (int cell = 0; cell < cells; ++cell) {
      const int row = cell / g;
      const int col = cell % g;
      for (int k = 0; k < g; ++k) {
        if (k != col) neighbors_[cell].push_back(row * g + k);
        if (k != row) neighbors_[cell].push_back(k * g + col);
      }
    }
  }

  int grid() const { return params_.grid; }
  int cells() const { return params_.grid * params_.grid; }
  int classes() const { return params_.grid; }
  const LatinParams& params() const { return params_; }

  double energy(const LatentTensor& u) const {
    check_shape(u);
    const int g = params_.grid;
    const std::vector<std::array<double, 4>> p = marginals(u);
    double overlap = 0.0;
    // Every unordered same-row or same-column pair counted once.
    for (int cell = 0; cell < cells(); ++cell) {
      for (int other : neighbors_[cell]) {
        if (other <= cell) continue;
        overlap += dot(p[cell], p[other], g);
      }
    }
    double tether = 0.0;
    for (int cell = 0; cell < cells(); ++cell) {
      if (!is_clue_[cell]) continue;
      for (int c = 0; c < g; ++c) {
        const double target = (c + 1 == clue_symbol_[cell]) ? params_.clue_scale : 0.0;
        const double d = u.at(cell, c) - target;
        tether += d * d;
      }
    }
    return overlap + 0.5 * params_.clue_weight * tether;
  }

  LatentTensor gradient(const LatentTensor& u) const {
    check_shape(u);
    const int g = params_.grid;
    const std::vector<std::array<double, 4>> p = marginals(u);
    LatentTensor grad = LatentTensor::zeros(cells(), g);
    for (int cell = 0; cell < cells(); ++cell) {
      std::array<double, 4> neighbor_sum{};
      double dot_sum = 0.0;
      for (int other : neighbors_[cell]) {
        for (int c = 0; c < g; ++c) neighbor_sum[c] += p[other][c];
        dot_sum += dot(p[cell], p[other], g);
      }
      for (int c = 0; c < g; ++c) {
        grad.at(cell, c) = p[cell][c] * (neighbor_sum[c] - dot_sum);
      }
      if (is_clue_[cell]) {
        for (int c = 0; c < g; ++c) {
          const double target = (c + 1 == clue_symbol_[cell]) ? params_.clue_scale : 0.0;
          grad.at(cell, c) += params_.clue_weight * (u.at(cell, c) - target);
        }
      }
    }
    return grad;
  }

  /// One descent step u - step_size * grad E(u); this is the backbone map.
  LatentTensor descend(const LatentTensor& u) const {
    LatentTensor out = u;
    add_scaled(out, -params_.step_size, gradient(u));
    return out;
  }

 private:
  void check_shape(const LatentTensor& u) const {
    if (u.rows != cells() || u.cols != params_.grid) {
      throw ConfigError("LatinEnergy: latent shape does not match grid");
    }
  }

  std::vector<std::array<double, 4>> marginals(const LatentTensor& u) const {
    const int g = params_.grid;
    std::vector<std::array<double, 4>> p(cells());
    for (int cell = 0; cell < cells(); ++cell) {
      double peak = u.at(cell, 0);
      for (int c = 1; c < g; ++c) peak = std::max(peak, u.at(cell, c));
      double total = 0.0;
      for (int c = 0; c < g; ++c) {
        p[cell][c] = std::exp(u.at(cell, c) - peak);
        total += p[cell][c];
      }
      for (int c = 0; c < g; ++c) p[cell][c] /= total;
    }
    return p;
  }

  static double dot(const std::array<double, 4>& a, const std::array<double, 4>& b, int g) {
    double acc = 0.0;
    for (int c = 0; c < g; ++c) acc += a[c] * b[c];
    return acc;
  }

  LatinParams params_;
  std::vector<int> clue_cells_;
  std::vector<int> clue_values_;
  std::vector<std::uint8_t> is_clue_;
  std::vector<int> clue_symbol_;
  std::vector<std::vector<int>> neighbors_;
};

/// Wraps one puzzle's energy descent as a backbone. The returned spec owns
/// the energy object, so it outlives the caller's arguments.
inline BackboneSpec make_latin_backbone(const LatinParams& params,
                                        std::vector<int> clue_cells,
                                        std::vector<int> clue_values) {
  auto energy = std::make_shared<LatinEnergy>(params, std::move(clue_cells),
                                              std::move(clue_values));
  BackboneSpec spec;
  spec.rows = energy->cells();
  spec.cols = energy->classes();
  spec.name = "latin(grid=" + std::to_string(params.grid) + ")";
  spec.apply = [energy](const LatentTensor& u) { return energy->descend(u); };
  return spec;
}

/// One generated puzzle: clue mask plus the square it was carved from.
struct LatinInstance {
  std::uint32_t index = 0;
  std::string id;
  std::vector<int> clue_cells;
  std::vector<int> clue_values;
  TokenGrid solution;
};

struct LatinPoolParams {
  LatinParams latin;
  int count = 200;
  int min_clues = 6;
  int max_clues = 9;
  std::uint64_t seed = 1;
  // Contraction probe near each generated solution; a ratio >= 1 means the
  // descent step overshoots and the configuration is rejected outright.
  int probe_directions = 16;
  double probe_radius = 0.5;
};

namespace detail {

/// Uniform-ish random Latin square by randomized backtracking over cells in
/// row-major order. Symbols are 1-based.
inline std::vector<int> random_latin_square(int g, CounterRng& rng) {
  const int cells = g * g;
  std::vector<int> square(cells, 0);
  std::vector<int> order(g);
  // Candidate symbols get reshuffled at every cell visit.
  std::function<bool(int)> fill = [&](int cell) -> bool {
    if (cell == cells) return true;
    const int row = cell / g;
    const int col = cell % g;
    for (int c = 0; c < g; ++c) order[c] = c + 1;
    for (int i = g - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.uniform() * (i + 1));
      std::swap(order[i], order[j]);
    }
    for (int candidate : order) {
      bool clash = false;
      for (int k = 0; k < col && !clash; ++k) clash = square[row * g + k] == candidate;
      for (int k = 0; k < row && !clash; ++k) clash = square[k * g + col] == candidate;
      if (clash) continue;
      square[cell] = candidate;
      if (fill(cell + 1)) return true;
    }
    square[cell] = 0;
    return false;
  };
  fill(0);
  return square;
}

}  // namespace detail

/// Embeds a full or partial assignment as clue_scale-sized one-hot logits.
inline LatentTensor encode_clue_logits(const LatinParams& params,
                                       const std::vector<int>& cells,
                                       const std::vector<int>& values) {
  const int g = params.grid;
  LatentTensor x = LatentTensor::zeros(g * g, g);
  for (std::size_t i = 0; i < cells.size(); ++i) {
    x.at(cells[i], values[i] - 1) = params.clue_scale;
  }
  return x;
}

/// Draws puzzles by sampling a random square and exposing a random subset of
/// cells as clues. Each puzzle's descent map is probed for contraction near
/// the solution; a failing probe throws ConfigError naming step_size, since
/// that is the knob that overshoots.
inline std::vector<LatinInstance> generate_latin_instances(const LatinPoolParams& pool) {
  if (pool.count < 1) throw ConfigError("generate_latin_instances: count must be >= 1");
  const int g = pool.latin.grid;
  const int cells = g * g;
  if (pool.min_clues < 0 || pool.max_clues < pool.min_clues || pool.max_clues > cells) {
    throw ConfigError("generate_latin_instances: bad clue range");
  }
  std::vector<LatinInstance> out;
  out.reserve(pool.count);
  for (int i = 0; i < pool.count; ++i) {
    CounterRng rng(pool.seed, StreamDomain::kPoolGen, static_cast<std::uint32_t>(i), 0, 0);
    LatinInstance inst;
    inst.index = static_cast<std::uint32_t>(i);
    char id[32];
    std::snprintf(id, sizeof(id), "latin%d-%05d", g, i);
    inst.id = id;
    const std::vector<int> square = detail::random_latin_square(g, rng);
    inst.solution = TokenGrid{square, g};
    const int span = pool.max_clues - pool.min_clues + 1;
    const int n_clues = pool.min_clues + static_cast<int>(rng.uniform() * span);
    std::vector<int> perm(cells);
    for (int k = 0; k < cells; ++k) perm[k] = k;
    for (int k = cells - 1; k > 0; --k) {
      const int j = static_cast<int>(rng.uniform() * (k + 1));
      std::swap(perm[k], perm[j]);
    }
    perm.resize(n_clues);
    std::sort(perm.begin(), perm.end());
    inst.clue_cells = perm;
    inst.clue_values.reserve(n_clues);
    for (int cell : inst.clue_cells) inst.clue_values.push_back(square[cell]);

    const BackboneSpec backbone =
        make_latin_backbone(pool.latin, inst.clue_cells, inst.clue_values);
    std::vector<int> all_cells(cells);
    for (int k = 0; k < cells; ++k) all_cells[k] = k;
    const LatentTensor near_solution =
        encode_clue_logits(pool.latin, all_cells, square);
    const double ratio = max_secant_ratio(backbone, near_solution, pool.probe_radius,
                                          pool.probe_directions, rng);
    if (ratio >= 1.0) {
      throw ConfigError("generate_latin_instances: descent map expands near the "
                        "solution (secant ratio " + std::to_string(ratio) +
                        "); lower step_size");
    }
    out.push_back(std::move(inst));
  }
  return out;
}

/// Assembles the runnable task: x holds the clue logits, both latents start
/// at zero, and the known square rides along as the ground truth.
inline TaskInstance make_latin_task(const LatinParams& params, const LatinInstance& inst) {
  TaskInstance task;
  task.x = encode_clue_logits(params, inst.clue_cells, inst.clue_values);
  task.h0.y = LatentTensor::zeros(task.x.rows, task.x.cols);
  task.h0.z = LatentTensor::zeros(task.x.rows, task.x.cols);
  task.solution = inst.solution;
  task.instance_id = inst.id;
  task.index = inst.index;
  return task;
}

}  // namespace gse
