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
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "gse/errors.hpp"
#include "gse/state.hpp"

namespace gse {

/// One support point of a finite cloud measure: an observable value phi, a
/// guide score q <= 0, and its probability mass.
struct WeightedAtom {
  double phi = 0.0;
  double q = 0.0;
  double prob = 0.0;
};

/// Finite discrete measure with exact exponential-tilt arithmetic. The
/// tilted measure at temperature t reweights atom i by exp(t * q_i); every
/// moment below is computed in closed form on the tilted masses, which makes
/// this class the reference oracle for the differential identities the
/// diagnostics check by finite differences.
class DiscreteMeasure {
 public:
  explicit DiscreteMeasure(std::vector<WeightedAtom> atoms) : atoms_(std::move(atoms)) {
    if (atoms_.empty()) throw ConfigError("DiscreteMeasure: no atoms");
    std::vector<double> raw;
    raw.reserve(atoms_.size());
    for (const WeightedAtom& a : atoms_) {
      if (!std::isfinite(a.phi) || !std::isfinite(a.q)) {
        throw ConfigError("DiscreteMeasure: non-finite atom");
      }
      if (a.q > 0.0) throw ConfigError("DiscreteMeasure: score above 0");
      raw.push_back(a.prob);
    }
    const WeightVector normalized = normalize_weights(raw);
    for (std::size_t i = 0; i < atoms_.size(); ++i) atoms_[i].prob = normalized.w[i];
  }

  const std::vector<WeightedAtom>& atoms() const { return atoms_; }

  /// Tilted masses proportional to prob_i * exp(t * q_i), normalized exactly.
  std::vector<double> tilted_probs(double t) const {
    std::vector<double> log_mass(atoms_.size());
    double peak = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
      log_mass[i] = std::log(atoms_[i].prob) + t * atoms_[i].q;
      peak = std::max(peak, log_mass[i]);
    }
    double total = 0.0;
    std::vector<double> out(atoms_.size());
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
      out[i] = std::exp(log_mass[i] - peak);
      total += out[i];
    }
    for (double& v : out) v /= total;
    return out;
  }

  double mean_phi(double t) const { return tilted_mean([](const WeightedAtom& a) { return a.phi; }, t); }
  double mean_q(double t) const { return tilted_mean([](const WeightedAtom& a) { return a.q; }, t); }

  double cov_phi_q(double t) const {
    const std::vector<double> w = tilted_probs(t);
    const double m_phi = weighted_mean(w, [](const WeightedAtom& a) { return a.phi; });
    const double m_q = weighted_mean(w, [](const WeightedAtom& a) { return a.q; });
    double acc = 0.0;
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
      acc += w[i] * (atoms_[i].phi - m_phi) * (atoms_[i].q - m_q);
    }
    return acc;
  }

  double var_q(double t) const {
    const std::vector<double> w = tilted_probs(t);
    const double m_q = weighted_mean(w, [](const WeightedAtom& a) { return a.q; });
    double acc = 0.0;
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
      const double d = atoms_[i].q - m_q;
      acc += w[i] * d * d;
    }
    return acc;
  }

  double std_q(double t) const { return std::sqrt(std::max(0.0, var_q(t))); }

  bool binary_phi() const {
    for (const WeightedAtom& a : atoms_) {
      if (a.phi != 0.0 && a.phi != 1.0) return false;
    }
    return true;
  }

  /// Tilted success mass p(t) = E_t[phi] for a binary observable.
  double success_mass(double t) const {
    require_binary("success_mass");
    return mean_phi(t);
  }

  /// Score gap Delta(t) = E_t[q | phi = 1] - E_t[q | phi = 0]. Undefined
  /// (nullopt) when either class carries no tilted mass.
  std::optional<double> class_gap(double t) const {
    require_binary("class_gap");
    const std::vector<double> w = tilted_probs(t);
    double mass1 = 0.0, mass0 = 0.0, q1 = 0.0, q0 = 0.0;
    for (std::size_t i = 0; i < atoms_.size(); ++i) {
      if (atoms_[i].phi == 1.0) {
        mass1 += w[i];
        q1 += w[i] * atoms_[i].q;
      } else {
        mass0 += w[i];
        q0 += w[i] * atoms_[i].q;
      }
    }
    if (mass1 <= 0.0 || mass0 <= 0.0) return std::nullopt;
    return q1 / mass1 - q0 / mass0;
  }

  /// log(p / (1 - p)) of the tilted success mass; +-inf when p hits {0, 1}.
  double log_odds(double t) const {
    const double p = success_mass(t);
    return std::log(p) - std::log1p(-p);
  }

 private:
  template <typename F>
  double tilted_mean(F&& value, double t) const {
    return weighted_mean(tilted_probs(t), std::forward<F>(value));
  }

  template <typename F>
  double weighted_mean(const std::vector<double>& w, F&& value) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < atoms_.size(); ++i) acc += w[i] * value(atoms_[i]);
    return acc;
  }

  void require_binary(const char* op) const {
    if (!binary_phi()) {
      throw ConfigError(std::string("DiscreteMeasure::") + op + ": observable is not binary");
    }
  }

  std::vector<WeightedAtom> atoms_;
};

}  // namespace gse
