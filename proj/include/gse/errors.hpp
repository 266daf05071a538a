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

#include <stdexcept>
#include <string>

namespace gse {

/// Thrown when a weight vector cannot be normalized because every entry is
/// zero or some entry is not finite. The filter catches this and falls back
/// to uniform weights, recording the reset in the step trace.
class DegenerateWeightsError : public std::runtime_error {
 public:
  explicit DegenerateWeightsError(const std::string& what)
      : std::runtime_error(what) {}
};

/// Thrown when a latent state stops being finite during a rollout. The
/// message names the step at which the divergence was detected.
class NumericDivergenceError : public std::runtime_error {
 public:
  explicit NumericDivergenceError(const std::string& what)
      : std::runtime_error(what) {}
};

/// Thrown for invalid configuration: mismatched shapes, out-of-range
/// hyperparameters, or a testbed map that fails its contraction probe.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace gse
