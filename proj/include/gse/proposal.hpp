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

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gse/backbone.hpp"
#include "gse/errors.hpp"
#include "gse/rng.hpp"
#include "gse/state.hpp"

namespace gse {

/// Exploration noise injected around the deterministic recursion. The
/// component sampler defaults to the standard Gaussian; any mean-zero,
/// unit-variance replacement works, in which case nu_squared_override should
/// carry E|xi|^2 of the full flat draw if it is not dim * 1.
struct NoiseConfig {
  double sigma = 0.0;
  std::function<double(CounterRng&)> component;
  std::optional<double> nu_squared_override;

  /// Second moment of one full noise tensor, used by stability bounds.
  double nu_squared(int flat_dim) const {
    return nu_squared_override.value_or(static_cast<double>(flat_dim));
  }
};

/// One draw from the proposal kernel: the next joint state plus the inner
/// iterates it passed through.
struct TrajectoryDraw {
  JointState next;
  std::vector<LatentTensor> inner;
};

/// Samples the stochastic recursion
///
///   zeta_1     = f(x + y + z)      + sigma * xi_0
///   zeta_{m+1} = f(x + y + zeta_m) + sigma * xi_m
///   y'         = f(y + zeta_M)     + sigma * xi_M
///
/// and returns (y', zeta_M) with the inner iterates zeta_1..zeta_M. Exactly
/// inner_steps + 1 noise tensors are drawn from rng in that order, also when
/// sigma is zero, so a run consumes the same stream layout at every sigma.
/// With sigma = 0 the draw reduces to the deterministic outer step.
inline TrajectoryDraw trajectory_sampler(const BackboneSpec& backbone,
                                         const LatentTensor& x, const JointState& h,
                                         int inner_steps, const NoiseConfig& noise,
                                         CounterRng& rng) {
  if (inner_steps < 1) throw ConfigError("trajectory_sampler: inner_steps must be >= 1");
  if (!(noise.sigma >= 0.0)) throw ConfigError("trajectory_sampler: sigma must be >= 0");
  if (!x.same_shape(h.y) || !x.same_shape(h.z)) {
    throw ConfigError("trajectory_sampler: x, y, z shapes differ");
  }
  if (x.rows != backbone.rows || x.cols != backbone.cols) {
    throw ConfigError("trajectory_sampler: state shape does not match backbone shape");
  }
  auto draw_noise = [&]() {
    LatentTensor xi = LatentTensor::zeros(x.rows, x.cols);
    if (noise.component) {
      for (double& v : xi.values) v = noise.component(rng);
    } else {
      for (double& v : xi.values) v = rng.gaussian();
    }
    return xi;
  };

  const LatentTensor bias = x + h.y;
  TrajectoryDraw draw;
  draw.inner.reserve(inner_steps);
  {
    LatentTensor zeta = backbone.apply(bias + h.z);
    add_scaled(zeta, noise.sigma, draw_noise());
    detail::check_finite_state(zeta, "stochastic inner", 1);
    draw.inner.push_back(std::move(zeta));
  }
  for (int m = 1; m < inner_steps; ++m) {
    LatentTensor zeta = backbone.apply(bias + draw.inner.back());
    add_scaled(zeta, noise.sigma, draw_noise());
    detail::check_finite_state(zeta, "stochastic inner", m + 1);
    draw.inner.push_back(std::move(zeta));
  }
  draw.next.z = draw.inner.back();
  draw.next.y = backbone.apply(h.y + draw.next.z);
  add_scaled(draw.next.y, noise.sigma, draw_noise());
  detail::check_finite_state(draw.next.y, "stochastic outer", 1);
  return draw;
}

}  // namespace gse
