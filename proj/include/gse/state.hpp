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
#include <cmath>
#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gse/errors.hpp"

namespace gse {

/// Dense latent state of shape (rows, cols), stored row-major in a flat
/// vector. rows is the token position axis, cols the feature axis. All norms
/// are Euclidean on the flat vector.
struct LatentTensor {
  std::vector<double> values;
  int rows = 0;
  int cols = 0;

  LatentTensor() = default;

  LatentTensor(std::vector<double> v, int r, int c)
      : values(std::move(v)), rows(r), cols(c) {
    if (r < 1 || c < 1) {
      throw ConfigError("LatentTensor: rows and cols must be positive");
    }
    if (values.size() != static_cast<std::size_t>(r) * c) {
      throw ConfigError("LatentTensor: value count does not match shape");
    }
  }

  static LatentTensor zeros(int r, int c) {
    return LatentTensor(std::vector<double>(static_cast<std::size_t>(r) * c, 0.0), r, c);
  }

  int flat_dim() const { return rows * cols; }

  double& at(int r, int c) { return values[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }

  bool same_shape(const LatentTensor& other) const {
    return rows == other.rows && cols == other.cols;
  }
};

inline bool is_finite(const LatentTensor& t) {
  for (double v : t.values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

inline double squared_norm(const LatentTensor& t) {
  double acc = 0.0;
  for (double v : t.values) acc += v * v;
  return acc;
}

inline double norm(const LatentTensor& t) { return std::sqrt(squared_norm(t)); }

inline double squared_distance(const LatentTensor& a, const LatentTensor& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    acc += d * d;
  }
  return acc;
}

inline LatentTensor operator+(const LatentTensor& a, const LatentTensor& b) {
  LatentTensor out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += b.values[i];
  return out;
}

inline LatentTensor operator-(const LatentTensor& a, const LatentTensor& b) {
  LatentTensor out = a;
  for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] -= b.values[i];
  return out;
}

inline LatentTensor scaled(const LatentTensor& a, double s) {
  LatentTensor out = a;
  for (double& v : out.values) v *= s;
  return out;
}

/// In-place a += s * b; b must match a's shape.
inline void add_scaled(LatentTensor& a, double s, const LatentTensor& b) {
  for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] += s * b.values[i];
}

/// Paired recursion state: y is the answer-carrying latent, z the scratch
/// latent refined by the inner loop. Both share one shape.
struct JointState {
  LatentTensor y;
  LatentTensor z;
};

/// Normalized importance weights over a particle cloud.
struct WeightVector {
  std::vector<double> w;

  int size() const { return static_cast<int>(w.size()); }
};

inline WeightVector uniform_weights(int n) {
  if (n < 1) throw ConfigError("uniform_weights: need at least one particle");
  return WeightVector{std::vector<double>(n, 1.0 / n)};
}

/// Normalizes raw nonnegative weights to the simplex. All-zero or non-finite
/// input throws DegenerateWeightsError; negative entries are a caller bug and
/// throw ConfigError.
inline WeightVector normalize_weights(const std::vector<double>& raw) {
  if (raw.empty()) throw ConfigError("normalize_weights: empty input");
  double sum = 0.0;
  for (double v : raw) {
    if (!std::isfinite(v)) {
      throw DegenerateWeightsError("normalize_weights: non-finite entry");
    }
    if (v < 0.0) throw ConfigError("normalize_weights: negative entry");
    sum += v;
  }
  if (sum <= 0.0) throw DegenerateWeightsError("normalize_weights: all entries zero");
  WeightVector out;
  out.w.reserve(raw.size());
  for (double v : raw) out.w.push_back(v / sum);
  return out;
}

/// Effective sample size 1 / sum(w^2) of normalized weights. Equals the
/// particle count for uniform weights and 1 when all mass sits on one atom.
inline double ess(const WeightVector& weights) {
  double acc = 0.0;
  for (double v : weights.w) acc += v * v;
  return 1.0 / acc;
}

/// A weighted cloud of joint states at one outer step.
struct ParticleCloud {
  std::vector<JointState> particles;
  WeightVector weights;
  int step = 0;
};

/// Decoded discrete answer: one token per row, values in 1..num_classes.
struct TokenGrid {
  std::vector<int> tokens;
  int num_classes = 0;

  friend bool operator==(const TokenGrid& a, const TokenGrid& b) {
    return a.num_classes == b.num_classes && a.tokens == b.tokens;
  }
  friend bool operator!=(const TokenGrid& a, const TokenGrid& b) { return !(a == b); }
  /// Lexicographic order on tokens; used to break ties deterministically.
  friend bool operator<(const TokenGrid& a, const TokenGrid& b) {
    return a.tokens < b.tokens;
  }
};

/// Reads off the answer as the per-row argmax over the first num_classes
/// feature columns. Ties resolve to the lowest class index.
struct ArgmaxDecoder {
  int num_classes = 0;

  TokenGrid operator()(const LatentTensor& y) const {
    if (num_classes < 1) throw ConfigError("ArgmaxDecoder: num_classes must be positive");
    if (num_classes > y.cols) {
      throw ConfigError("ArgmaxDecoder: num_classes exceeds feature dimension");
    }
    TokenGrid grid;
    grid.num_classes = num_classes;
    grid.tokens.reserve(y.rows);
    for (int r = 0; r < y.rows; ++r) {
      int best = 0;
      for (int c = 1; c < num_classes; ++c) {
        if (y.at(r, c) > y.at(r, best)) best = c;
      }
      grid.tokens.push_back(best + 1);
    }
    return grid;
  }
};

inline TokenGrid decode(const JointState& h, const ArgmaxDecoder& decoder) {
  return decoder(h.y);
}

}  // namespace gse
