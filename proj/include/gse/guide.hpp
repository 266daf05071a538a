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

#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <utility>

#include "gse/errors.hpp"
#include "gse/state.hpp"

namespace gse {

/// A verifier head: maps a joint state to the logit of the state being on a
/// solving trajectory. The score fed to the filter is the log-probability
/// log sigmoid(logit), always <= 0.
struct GuideSpec {
  std::function<double(const JointState&)> logit;
  std::string name;
};

/// Numerically stable log sigmoid(v): never exponentiates a positive value,
/// so it underflows gracefully instead of overflowing.
inline double log_sigmoid(double v) {
  if (v >= 0.0) return -std::log1p(std::exp(-v));
  return v - std::log1p(std::exp(v));
}

/// Guide score q(h) = log sigmoid(logit(h)).
inline double guide_score(const GuideSpec& guide, const JointState& h) {
  return log_sigmoid(guide.logit(h));
}

/// Tempered potential G_beta(h) = exp(beta * q(h)), in (0, 1] for beta >= 0.
inline double potential(const GuideSpec& guide, const JointState& h, double beta) {
  if (!(beta >= 0.0)) throw ConfigError("potential: beta must be >= 0");
  return std::exp(beta * guide_score(guide, h));
}

/// Fraction of equal tokens between two grids of the same shape.
inline double fraction_correct(const TokenGrid& a, const TokenGrid& b) {
  if (a.tokens.size() != b.tokens.size() || a.tokens.empty()) {
    throw ConfigError("fraction_correct: token grids differ in length");
  }
  int hits = 0;
  for (std::size_t i = 0; i < a.tokens.size(); ++i) {
    if (a.tokens[i] == b.tokens[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(a.tokens.size());
}

/// Oracle verifier: logit = kappa * (2 * frac_correct - 1), computed against
/// the known solution of the decoded answer. kappa sets how sharply the
/// guide separates good from bad decodes; the fully correct decode scores
/// log sigmoid(kappa), the fully wrong one log sigmoid(-kappa).
inline GuideSpec make_oracle_guide(TokenGrid solution, const ArgmaxDecoder& decoder,
                                   double kappa) {
  if (!(kappa > 0.0)) throw ConfigError("make_oracle_guide: kappa must be positive");
  GuideSpec spec;
  spec.name = "oracle(kappa=" + std::to_string(kappa) + ")";
  spec.logit = [solution = std::move(solution), decoder, kappa](const JointState& h) {
    return kappa * (2.0 * fraction_correct(decoder(h.y), solution) - 1.0);
  };
  return spec;
}

namespace detail {

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

/// Deterministic hash of the answer latent into [-1, 1); state-dependent but
/// carries no information about answer quality.
inline double state_hash_unit(const LatentTensor& y) {
  std::uint64_t h = 0x243f6a8885a308d3ull;
  for (double v : y.values) h = mix64(h ^ std::bit_cast<std::uint64_t>(v));
  return 2.0 * (static_cast<double>(h >> 11) * 0x1.0p-53) - 1.0;
}

}  // namespace detail

/// Uninformative verifier: logit = level + jitter * hash(y). With jitter = 0
/// the potential is constant, so tempering provably leaves the weights
/// untouched; a small jitter exercises the full weighting path while staying
/// uncorrelated with correctness.
inline GuideSpec make_flat_guide(double level, double jitter) {
  if (!(jitter >= 0.0)) throw ConfigError("make_flat_guide: jitter must be >= 0");
  GuideSpec spec;
  spec.name = "flat(level=" + std::to_string(level) + ",jitter=" + std::to_string(jitter) + ")";
  spec.logit = [level, jitter](const JointState& h) {
    return level + jitter * detail::state_hash_unit(h.y);
  };
  return spec;
}

}  // namespace gse
