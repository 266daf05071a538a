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
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gse/errors.hpp"
#include "gse/rng.hpp"
#include "gse/state.hpp"

namespace gse {

/// A deterministic latent-to-latent map together with its shape. For
/// synthetic backbones the exact global Lipschitz constant is carried along;
/// learned or testbed maps leave it unset and rely on empirical probes.
struct BackboneSpec {
  std::function<LatentTensor(const LatentTensor&)> apply;
  int rows = 0;
  int cols = 0;
  std::string name;
  std::optional<double> lipschitz;
};

/// One task: the embedded prompt x, the initial joint state, and, when the
/// testbed knows it, the ground-truth answer. index addresses the per-task
/// random substreams.
struct TaskInstance {
  LatentTensor x;
  JointState h0;
  std::optional<TokenGrid> solution;
  std::string instance_id;
  std::uint32_t index = 0;
};

namespace detail {

inline void check_finite_state(const LatentTensor& t, const char* where, int step) {
  if (!is_finite(t)) {
    throw NumericDivergenceError(std::string("non-finite state at ") + where +
                                 " step " + std::to_string(step));
  }
}

}  // namespace detail

/// Runs the inner refinement loop and returns all M iterates z_1..z_M, where
/// z_1 = f(x + y + z) and z_{m+1} = f(x + y + z_m). The input state is not
/// modified; callers needing only the final iterate take back().
inline std::vector<LatentTensor> inner_rollout(const BackboneSpec& backbone,
                                               const LatentTensor& x,
                                               const JointState& h,
                                               int inner_steps) {
  if (inner_steps < 1) throw ConfigError("inner_rollout: inner_steps must be >= 1");
  if (!x.same_shape(h.y) || !x.same_shape(h.z)) {
    throw ConfigError("inner_rollout: x, y, z shapes differ");
  }
  if (x.rows != backbone.rows || x.cols != backbone.cols) {
    throw ConfigError("inner_rollout: state shape does not match backbone shape");
  }
  const LatentTensor bias = x + h.y;
  std::vector<LatentTensor> iterates;
  iterates.reserve(inner_steps);
  iterates.push_back(backbone.apply(bias + h.z));
  detail::check_finite_state(iterates.back(), "inner", 1);
  for (int m = 1; m < inner_steps; ++m) {
    iterates.push_back(backbone.apply(bias + iterates.back()));
    detail::check_finite_state(iterates.back(), "inner", m + 1);
  }
  return iterates;
}

/// One deterministic outer step: refine z for inner_steps iterations, then
/// update the answer latent as y' = f(y + z_M) and keep z' = z_M.
inline JointState outer_step(const BackboneSpec& backbone, const LatentTensor& x,
                             const JointState& h, int inner_steps) {
  std::vector<LatentTensor> iterates = inner_rollout(backbone, x, h, inner_steps);
  JointState next;
  next.z = std::move(iterates.back());
  next.y = backbone.apply(h.y + next.z);
  detail::check_finite_state(next.y, "outer", 1);
  return next;
}

/// Largest secant ratio |f(u + r d) - f(u)| / r over n_dirs random unit
/// directions d at one probe point. A cheap one-sided check that the map
/// contracts locally; it can only underestimate the true local constant.
inline double max_secant_ratio(const BackboneSpec& backbone, const LatentTensor& point,
                               double radius, int n_dirs, CounterRng& rng) {
  if (!(radius > 0.0)) throw ConfigError("max_secant_ratio: radius must be positive");
  if (n_dirs < 1) throw ConfigError("max_secant_ratio: need at least one direction");
  const LatentTensor base = backbone.apply(point);
  double worst = 0.0;
  for (int k = 0; k < n_dirs; ++k) {
    LatentTensor probe = point;
    add_scaled(probe, radius, unit_direction(rng, point.rows, point.cols));
    const double ratio = std::sqrt(squared_distance(backbone.apply(probe), base)) / radius;
    worst = std::max(worst, ratio);
  }
  return worst;
}

/// Affine contraction u -> fixed_point + rho * (u - fixed_point). Its exact
/// Lipschitz constant is rho, which makes it the reference backbone for
/// stability tests: every bound that holds with rho in place of an empirical
/// estimate must hold verbatim here.
inline BackboneSpec make_affine_backbone(double rho, LatentTensor fixed_point) {
  if (!(rho >= 0.0 && rho < 1.0)) {
    throw ConfigError("make_affine_backbone: rho must lie in [0, 1)");
  }
  BackboneSpec spec;
  spec.rows = fixed_point.rows;
  spec.cols = fixed_point.cols;
  spec.name = "affine(rho=" + std::to_string(rho) + ")";
  spec.lipschitz = rho;
  spec.apply = [rho, fp = std::move(fixed_point)](const LatentTensor& u) {
    LatentTensor out = fp;
    for (std::size_t i = 0; i < out.values.size(); ++i) {
      out.values[i] += rho * (u.values[i] - fp.values[i]);
    }
    return out;
  };
  return spec;
}

}  // namespace gse
