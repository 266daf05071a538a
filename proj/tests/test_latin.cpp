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

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "gse/latin.hpp"
#include "gse/rng.hpp"

using Catch::Approx;

namespace {

bool is_latin_square(const std::vector<int>& cells, int g) {
  for (int r = 0; r < g; ++r) {
    std::set<int> seen;
    for (int c = 0; c < g; ++c) seen.insert(cells[r * g + c]);
    if (static_cast<int>(seen.size()) != g) return false;
  }
  for (int c = 0; c < g; ++c) {
    std::set<int> seen;
    for (int r = 0; r < g; ++r) seen.insert(cells[r * g + c]);
    if (static_cast<int>(seen.size()) != g) return false;
  }
  return true;
}

std::vector<int> all_cells(int g) {
  std::vector<int> cells(g * g);
  for (int i = 0; i < g * g; ++i) cells[i] = i;
  return cells;
}

}  // namespace

TEST_CASE("parameters are validated") {
  gse::LatinParams p;
  p.grid = 5;
  CHECK_THROWS_AS(gse::LatinEnergy(p, {}, {}), gse::ConfigError);
  p.grid = 4;
  p.step_size = 0.0;
  CHECK_THROWS_AS(gse::LatinEnergy(p, {}, {}), gse::ConfigError);
  p = gse::LatinParams{};
  CHECK_THROWS_AS(gse::LatinEnergy(p, {0, 0}, {1, 2}), gse::ConfigError);  // duplicate cell
  CHECK_THROWS_AS(gse::LatinEnergy(p, {0}, {5}), gse::ConfigError);        // value out of range
  CHECK_THROWS_AS(gse::LatinEnergy(p, {16}, {1}), gse::ConfigError);       // cell out of range
  CHECK_NOTHROW(gse::LatinEnergy(p, {0, 5}, {1, 2}));
}

TEST_CASE("overlap energy sees normalized marginals only") {
  gse::LatinParams p;
  p.grid = 4;
  const gse::LatinEnergy energy(p, {}, {});
  gse::CounterRng rng(1, gse::StreamDomain::kDiagnostics, 0, 0, 0);
  const gse::LatentTensor u = gse::gaussian_tensor(rng, 16, 4);
  const double base = energy.energy(u);
  // Shifting all logits of one cell by a constant cannot move the energy:
  // the overlap term reads per-cell softmax distributions and no clue
  // tether is active.
  for (int cell = 0; cell < 16; ++cell) {
    gse::LatentTensor shifted = u;
    for (int c = 0; c < 4; ++c) shifted.at(cell, c) += 2.5;
    CHECK(energy.energy(shifted) == Approx(base).epsilon(1e-12));
  }
}

TEST_CASE("one-hot encodings minimize the energy exactly on valid squares") {
  // Enumerate every complete 3x3 assignment and compare energies of the
  // corresponding scaled one-hot encodings.  The minimizers must be exactly
  // the twelve valid 3x3 grids.
  gse::LatinParams p;
  p.grid = 3;
  const gse::LatinEnergy energy(p, {}, {});
  const std::vector<int> cells = all_cells(3);
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::pair<double, std::vector<int>>> scored;
  std::vector<int> assignment(9, 0);
  for (int code = 0; code < 19683; ++code) {
    int v = code;
    for (int i = 0; i < 9; ++i) {
      assignment[i] = 1 + v % 3;  // symbols are 1-based
      v /= 3;
    }
    const gse::LatentTensor u = gse::encode_clue_logits(p, cells, assignment);
    const double e = energy.energy(u);
    best = std::min(best, e);
    scored.emplace_back(e, assignment);
  }
  int minimizers = 0;
  for (const auto& [e, a] : scored) {
    if (e <= best + 1e-9) {
      ++minimizers;
      CHECK(is_latin_square(a, 3));
    } else {
      CHECK_FALSE(e <= best + 1e-9);
    }
  }
  CHECK(minimizers == 12);
}

TEST_CASE("analytic gradient matches central differences") {
  gse::LatinParams p;
  p.grid = 3;
  const gse::LatinEnergy energy(p, {0, 4}, {2, 3});
  gse::CounterRng rng(2, gse::StreamDomain::kDiagnostics, 0, 0, 0);
  for (int trial = 0; trial < 5; ++trial) {
    gse::LatentTensor u = gse::gaussian_tensor(rng, 9, 3);
    for (double& v : u.values) v *= 1.5;
    const gse::LatentTensor grad = energy.gradient(u);
    const double h = 1e-5;
    for (std::size_t i = 0; i < u.values.size(); ++i) {
      gse::LatentTensor up = u;
      gse::LatentTensor dn = u;
      up.values[i] += h;
      dn.values[i] -= h;
      const double fd = (energy.energy(up) - energy.energy(dn)) / (2.0 * h);
      CHECK(grad.values[i] == Approx(fd).margin(1e-6));
    }
  }
}

TEST_CASE("a descent step never raises the energy at the default rate") {
  for (int g : {3, 4}) {
    gse::LatinParams p;
    p.grid = g;
    const gse::LatinEnergy energy(p, {0, 1}, {1, 2});
    gse::CounterRng rng(3, gse::StreamDomain::kDiagnostics, g, 0, 0);
    for (int trial = 0; trial < 200; ++trial) {
      gse::LatentTensor u = gse::gaussian_tensor(rng, g * g, g);
      for (double& v : u.values) v *= 2.0;
      CHECK(energy.energy(energy.descend(u)) <= energy.energy(u) + 1e-12);
    }
  }
}

TEST_CASE("the tether vanishes on a consistent solution encoding") {
  gse::LatinParams p;
  p.grid = 3;
  gse::CounterRng rng(4, gse::StreamDomain::kPoolGen, 0, 0, 0);
  const std::vector<int> square = gse::detail::random_latin_square(3, rng);
  REQUIRE(is_latin_square(square, 3));
  const std::vector<int> clue_cells = {0, 4, 8};
  const std::vector<int> clue_values = {square[0], square[4], square[8]};
  const gse::LatinEnergy with_clues(p, clue_cells, clue_values);
  const gse::LatinEnergy without(p, {}, {});
  const gse::LatentTensor u = gse::encode_clue_logits(p, all_cells(3), square);
  CHECK(with_clues.energy(u) == Approx(without.energy(u)).margin(1e-14));
}

TEST_CASE("the backbone matches a single descent step") {
  gse::LatinParams p;
  p.grid = 4;
  const std::vector<int> cells = {2, 7, 11};
  const std::vector<int> values = {1, 2, 3};
  const gse::BackboneSpec f = gse::make_latin_backbone(p, cells, values);
  const gse::LatinEnergy energy(p, cells, values);
  CHECK(f.rows == 16);
  CHECK(f.cols == 4);
  CHECK_FALSE(f.lipschitz.has_value());
  gse::CounterRng rng(5, gse::StreamDomain::kDiagnostics, 0, 0, 0);
  const gse::LatentTensor u = gse::gaussian_tensor(rng, 16, 4);
  CHECK(f.apply(u).values == energy.descend(u).values);
}

TEST_CASE("random squares are valid for both grid sizes") {
  for (int g : {3, 4}) {
    gse::CounterRng rng(6, gse::StreamDomain::kPoolGen, g, 0, 0);
    for (int trial = 0; trial < 50; ++trial) {
      const std::vector<int> square = gse::detail::random_latin_square(g, rng);
      REQUIRE(square.size() == static_cast<std::size_t>(g * g));
      CHECK(is_latin_square(square, g));
    }
  }
}

TEST_CASE("instance generation is deterministic and internally consistent") {
  gse::LatinPoolParams pool;
  pool.count = 24;
  pool.seed = 17;
  const std::vector<gse::LatinInstance> a = gse::generate_latin_instances(pool);
  const std::vector<gse::LatinInstance> b = gse::generate_latin_instances(pool);
  REQUIRE(a.size() == 24);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].solution == b[i].solution);
    CHECK(a[i].clue_cells == b[i].clue_cells);
    CHECK(a[i].clue_values == b[i].clue_values);
    CHECK(a[i].index == static_cast<std::uint32_t>(i));
    CHECK(is_latin_square(a[i].solution.tokens, pool.latin.grid));
    const std::size_t n_clues = a[i].clue_cells.size();
    CHECK(n_clues >= static_cast<std::size_t>(pool.min_clues));
    CHECK(n_clues <= static_cast<std::size_t>(pool.max_clues));
    CHECK(std::is_sorted(a[i].clue_cells.begin(), a[i].clue_cells.end()));
    for (std::size_t k = 0; k < n_clues; ++k) {
      CHECK(a[i].clue_values[k] == a[i].solution.tokens[a[i].clue_cells[k]]);
    }
  }
}

TEST_CASE("task assembly exposes clue logits and a zero initial state") {
  gse::LatinPoolParams pool;
  pool.count = 3;
  const std::vector<gse::LatinInstance> instances = gse::generate_latin_instances(pool);
  const gse::TaskInstance task = gse::make_latin_task(pool.latin, instances[1]);
  CHECK(task.index == 1);
  CHECK(task.instance_id == instances[1].id);
  REQUIRE(task.solution.has_value());
  const gse::LatentTensor expected =
      gse::encode_clue_logits(pool.latin, instances[1].clue_cells, instances[1].clue_values);
  CHECK(task.x.values == expected.values);
  CHECK(task.h0.y.values == gse::LatentTensor::zeros(16, 4).values);
  CHECK(task.h0.z.values == gse::LatentTensor::zeros(16, 4).values);
}

TEST_CASE("an expansive step size is rejected at generation time") {
  gse::LatinPoolParams pool;
  pool.count = 2;
  pool.latin.step_size = 5.0;
  CHECK_THROWS_AS(gse::generate_latin_instances(pool), gse::ConfigError);
}
