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
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gse/backbone.hpp"
#include "gse/discrete_measure.hpp"
#include "gse/errors.hpp"
#include "gse/filter.hpp"
#include "gse/proposal.hpp"
#include "gse/rng.hpp"
#include "gse/state.hpp"

namespace gse {

/// Largest secant ratio of the inner map z -> f(x + y + z) over random probes
/// of the given radius around each supplied point. A one-sided stand-in for
/// the local Lipschitz constant along a trajectory; it can only ever
/// underestimate, so a value >= 1 is a hard disqualifier while a value < 1
/// merely supports contraction.
inline double empirical_lipschitz(const BackboneSpec& backbone, const LatentTensor& x,
                                  const LatentTensor& y,
                                  const std::vector<LatentTensor>& points,
                                  double radius, int n_probes, CounterRng& rng) {
  if (points.empty()) throw ConfigError("empirical_lipschitz: no probe points");
  BackboneSpec inner;
  inner.rows = backbone.rows;
  inner.cols = backbone.cols;
  const LatentTensor bias = x + y;
  inner.apply = [&backbone, &bias](const LatentTensor& z) { return backbone.apply(bias + z); };
  double worst = 0.0;
  for (const LatentTensor& point : points) {
    worst = std::max(worst, max_secant_ratio(inner, point, radius, n_probes, rng));
  }
  return worst;
}

/// Monte Carlo statistics of the stochastic inner recursion against its
/// noise-free shadow, per tube radius. Radii are alpha * sigma * nu with
/// nu = sqrt(E|xi|^2), so alpha measures the tube in units of one noise RMS.
struct TubeRadiusStats {
  double alpha = 0.0;
  double radius = 0.0;
  double rho_probe = 0.0;  // secant probe along the noise-free iterates
  double rho_used = 0.0;   // exact constant when the backbone carries one
  bool bound_applicable = false;  // rho_used < 1
  double exit_probability = 0.0;  // P(tau_r <= M)
  double exit_se = 0.0;
  double exit_bound = 0.0;  // (M / r^2) sigma^2 nu^2 / (1 - rho^2)
  std::vector<double> deviation_mean;   // E[|e_m|^2 1{tau_r > m}], m = 1..M
  std::vector<double> deviation_se;
  std::vector<double> deviation_bound;  // sigma^2 nu^2 (1 - rho^{2m}) / (1 - rho^2)
};

struct TubeReport {
  int inner_steps = 0;
  double sigma = 0.0;
  double nu_squared = 0.0;
  int n_rollouts = 0;
  std::vector<TubeRadiusStats> per_radius;
};

/// Compares n_rollouts stochastic inner recursions with the deterministic one
/// started from the same state, recording first-exit frequencies from tubes
/// of the given radii and the tube-conditioned squared deviations, next to
/// the closed-form bounds evaluated at the (probed or exact) contraction
/// factor. Rollout i draws from stream (seed, kDiagnostics, series, i).
inline TubeReport tube_statistics(const BackboneSpec& backbone, const LatentTensor& x,
                                  const JointState& h, int inner_steps, double sigma,
                                  const std::vector<double>& alphas, int n_rollouts,
                                  std::uint64_t seed, std::uint32_t series = 0) {
  if (!(sigma > 0.0)) throw ConfigError("tube_statistics: sigma must be positive");
  if (n_rollouts < 2) throw ConfigError("tube_statistics: need at least two rollouts");
  if (alphas.empty()) throw ConfigError("tube_statistics: no tube radii given");
  const int M = inner_steps;
  const std::vector<LatentTensor> reference = inner_rollout(backbone, x, h, M);

  NoiseConfig noise;
  noise.sigma = sigma;
  const double nu_sq = noise.nu_squared(x.flat_dim());

  // Squared deviations e_m = zeta_m - z_m for every rollout, m = 1..M.
  std::vector<std::vector<double>> deviation_sq(n_rollouts, std::vector<double>(M));
  for (int i = 0; i < n_rollouts; ++i) {
    CounterRng rng(seed, StreamDomain::kDiagnostics, series, static_cast<std::uint32_t>(i), 0);
    const TrajectoryDraw draw = trajectory_sampler(backbone, x, h, M, noise, rng);
    for (int m = 0; m < M; ++m) {
      deviation_sq[i][m] = squared_distance(draw.inner[m], reference[m]);
    }
  }

  // Probe points: the start z and every noise-free iterate.
  std::vector<LatentTensor> probe_points;
  probe_points.reserve(M + 1);
  probe_points.push_back(h.z);
  for (const LatentTensor& z : reference) probe_points.push_back(z);

  TubeReport report;
  report.inner_steps = M;
  report.sigma = sigma;
  report.nu_squared = nu_sq;
  report.n_rollouts = n_rollouts;

  for (std::size_t a = 0; a < alphas.size(); ++a) {
    TubeRadiusStats stats;
    stats.alpha = alphas[a];
    if (!(stats.alpha > 0.0)) throw ConfigError("tube_statistics: alpha must be positive");
    stats.radius = stats.alpha * sigma * std::sqrt(nu_sq);
    const double radius_sq = stats.radius * stats.radius;

    CounterRng probe_rng(seed, StreamDomain::kDiagnostics, series, 0xffffffffu,
                         static_cast<std::uint32_t>(a));
    stats.rho_probe = empirical_lipschitz(backbone, x, h.y, probe_points, stats.radius,
                                          16, probe_rng);
    stats.rho_used = backbone.lipschitz.value_or(stats.rho_probe);
    stats.bound_applicable = stats.rho_used < 1.0;

    int exits = 0;
    std::vector<double> dev_sum(M, 0.0);
    std::vector<double> dev_sum_sq(M, 0.0);
    for (int i = 0; i < n_rollouts; ++i) {
      int tau = M + 1;
      for (int m = 0; m < M; ++m) {
        if (deviation_sq[i][m] > radius_sq) {
          tau = m + 1;
          break;
        }
      }
      if (tau <= M) ++exits;
      for (int m = 0; m < M; ++m) {
        // 1{tau > m + 1}: the deviation counts while still inside the tube.
        const double v = (tau > m + 1) ? deviation_sq[i][m] : 0.0;
        dev_sum[m] += v;
        dev_sum_sq[m] += v * v;
      }
    }
    const double n = static_cast<double>(n_rollouts);
    stats.exit_probability = exits / n;
    stats.exit_se =
        std::sqrt(stats.exit_probability * (1.0 - stats.exit_probability) / n);
    stats.deviation_mean.resize(M);
    stats.deviation_se.resize(M);
    stats.deviation_bound.resize(M);
    const double rho_sq = stats.rho_used * stats.rho_used;
    for (int m = 0; m < M; ++m) {
      const double mean = dev_sum[m] / n;
      const double var = std::max(0.0, dev_sum_sq[m] / n - mean * mean);
      stats.deviation_mean[m] = mean;
      stats.deviation_se[m] = std::sqrt(var / n);
      double geometric = 0.0;
      double power = 1.0;
      for (int j = 0; j <= m; ++j) {
        geometric += power;
        power *= rho_sq;
      }
      stats.deviation_bound[m] = sigma * sigma * nu_sq * geometric;
    }
    stats.exit_bound = stats.bound_applicable
                           ? (M / radius_sq) * sigma * sigma * nu_sq / (1.0 - rho_sq)
                           : std::numeric_limits<double>::infinity();
    report.per_radius.push_back(std::move(stats));
  }
  return report;
}

/// Difference of weighted mean scores between succeeding and failing
/// particles; nullopt when either class has no weight.
inline std::optional<double> class_conditional_gap(const std::vector<double>& scores,
                                                   const std::vector<std::uint8_t>& success,
                                                   const WeightVector& weights) {
  if (scores.size() != success.size() ||
      scores.size() != static_cast<std::size_t>(weights.size())) {
    throw ConfigError("class_conditional_gap: length mismatch");
  }
  double mass1 = 0.0, mass0 = 0.0, acc1 = 0.0, acc0 = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (success[i]) {
      mass1 += weights.w[i];
      acc1 += weights.w[i] * scores[i];
    } else {
      mass0 += weights.w[i];
      acc0 += weights.w[i] * scores[i];
    }
  }
  if (mass1 <= 0.0 || mass0 <= 0.0) return std::nullopt;
  return acc1 / mass1 - acc0 / mass0;
}

struct SpreadBound {
  double bound = 0.0;
  std::vector<double> t_grid;
  std::vector<double> spread;  // tilted std of the score at each grid point
};

/// Upper bound (beta / 2) * sup_{t in [0, beta]} std_t(q) on how far
/// tempering by beta can move any [0, 1]-valued cloud average. The supremum
/// is taken over a uniform grid including both endpoints.
inline SpreadBound q_spread_bound(const std::vector<double>& scores,
                                  const WeightVector& weights, double beta,
                                  int grid_points = 64) {
  if (!(beta >= 0.0)) throw ConfigError("q_spread_bound: beta must be >= 0");
  if (grid_points < 1) throw ConfigError("q_spread_bound: need at least one grid point");
  if (scores.size() != static_cast<std::size_t>(weights.size())) {
    throw ConfigError("q_spread_bound: length mismatch");
  }
  std::vector<WeightedAtom> atoms(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    atoms[i] = WeightedAtom{0.0, scores[i], weights.w[i]};
  }
  const DiscreteMeasure measure(std::move(atoms));
  SpreadBound out;
  double sup = 0.0;
  for (int i = 0; i < grid_points; ++i) {
    const double t = (grid_points == 1) ? 0.0 : beta * i / (grid_points - 1);
    const double s = measure.std_q(t);
    out.t_grid.push_back(t);
    out.spread.push_back(s);
    sup = std::max(sup, s);
  }
  out.bound = 0.5 * beta * sup;
  return out;
}

struct IdentityCheck {
  double lhs = 0.0;  // centered finite difference of the tilted quantity
  double rhs = 0.0;  // closed-form derivative
  double gap = 0.0;
};

/// Checks d/dt E_t[phi] = Cov_t(phi, q) by centered finite differences.
inline IdentityCheck tilt_identity_check(const DiscreteMeasure& measure, double t,
                                         double fd_step = 1e-5) {
  if (!(fd_step > 0.0)) throw ConfigError("tilt_identity_check: fd_step must be positive");
  IdentityCheck check;
  check.lhs = (measure.mean_phi(t + fd_step) - measure.mean_phi(t - fd_step)) / (2.0 * fd_step);
  check.rhs = measure.cov_phi_q(t);
  check.gap = check.lhs - check.rhs;
  return check;
}

/// Checks d/dt log odds of the tilted success mass against the class gap
/// Delta(t). Inapplicable (nullopt) when a class loses all mass or the
/// success probability touches {0, 1} anywhere the difference stencil looks.
inline std::optional<IdentityCheck> log_odds_identity_check(const DiscreteMeasure& measure,
                                                            double t,
                                                            double fd_step = 1e-5) {
  if (!(fd_step > 0.0)) throw ConfigError("log_odds_identity_check: fd_step must be positive");
  const std::optional<double> gap = measure.class_gap(t);
  if (!gap.has_value()) return std::nullopt;
  for (double probe : {t - fd_step, t, t + fd_step}) {
    const double p = measure.success_mass(probe);
    if (!(p > 0.0 && p < 1.0)) return std::nullopt;
  }
  IdentityCheck check;
  check.lhs = (measure.log_odds(t + fd_step) - measure.log_odds(t - fd_step)) / (2.0 * fd_step);
  check.rhs = *gap;
  check.gap = check.lhs - check.rhs;
  return check;
}

struct CovarianceEstimate {
  double value = 0.0;
  double std_error = 0.0;
  int n = 0;
};

/// Monte Carlo check that a Bernoulli label correlates nonnegatively with
/// any strictly increasing transform of its own success probability:
/// Cov(Y, psi(eta)) >= 0 when Y | eta ~ Bernoulli(eta). The sampler draws
/// eta; psi defaults to the log link, matching log-probability scores.
inline CovarianceEstimate bce_alignment_check(
    const std::function<double(CounterRng&)>& eta_sampler, int n_samples, CounterRng& rng,
    const std::function<double(double)>& psi = nullptr) {
  if (n_samples < 2) throw ConfigError("bce_alignment_check: need at least two samples");
  std::vector<double> labels(n_samples);
  std::vector<double> transformed(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    const double eta = eta_sampler(rng);
    if (!(eta > 0.0 && eta < 1.0)) {
      throw ConfigError("bce_alignment_check: eta must lie in (0, 1)");
    }
    transformed[i] = psi ? psi(eta) : std::log(eta);
    labels[i] = (rng.uniform() < eta) ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(n_samples);
  const double mean_y = std::accumulate(labels.begin(), labels.end(), 0.0) / n;
  const double mean_t = std::accumulate(transformed.begin(), transformed.end(), 0.0) / n;
  double acc = 0.0, acc_sq = 0.0;
  for (int i = 0; i < n_samples; ++i) {
    const double c = (labels[i] - mean_y) * (transformed[i] - mean_t);
    acc += c;
    acc_sq += c * c;
  }
  CovarianceEstimate est;
  est.n = n_samples;
  est.value = acc / (n - 1.0);
  const double mean_c = acc / n;
  est.std_error = std::sqrt(std::max(0.0, acc_sq / n - mean_c * mean_c) / n);
  return est;
}

/// Per-position decode entropies of one run. All entropies are normalized by
/// log(num_classes), so they live in [0, 1].
struct EntropyReport {
  std::vector<double> terminal;     // H at the final step, per position
  std::vector<double> aggregated;   // mean H over the chosen steps
  std::vector<double> contraction;  // aggregated - terminal
  std::vector<std::vector<double>> terminal_marginals;  // [position][class]
};

namespace detail {

inline std::vector<std::vector<double>> step_marginals(const StepRecord& record,
                                                       int num_classes) {
  const std::size_t positions = record.decodes.front().tokens.size();
  std::vector<std::vector<double>> p(positions, std::vector<double>(num_classes, 0.0));
  for (std::size_t s = 0; s < record.decodes.size(); ++s) {
    const double w = std::exp(record.log_weights[s]);
    const std::vector<int>& tokens = record.decodes[s].tokens;
    for (std::size_t l = 0; l < positions; ++l) p[l][tokens[l] - 1] += w;
  }
  return p;
}

inline double normalized_entropy(const std::vector<double>& p, double log_classes) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h / log_classes;
}

}  // namespace detail

/// Entropy of the weighted decode marginals, per token position: at the
/// terminal step, averaged over the chosen steps (1-based; empty means all),
/// and their difference. A position whose averaged entropy exceeds its
/// terminal entropy contracted toward consensus during the run.
inline EntropyReport token_entropy(const RunTrace& trace, std::vector<int> steps,
                                   int num_classes) {
  if (trace.steps.empty()) throw ConfigError("token_entropy: empty trace");
  if (num_classes < 2) throw ConfigError("token_entropy: need at least two classes");
  if (steps.empty()) {
    steps.resize(trace.steps.size());
    std::iota(steps.begin(), steps.end(), 1);
  }
  for (int step : steps) {
    if (step < 1 || step > static_cast<int>(trace.steps.size())) {
      throw ConfigError("token_entropy: step index out of range");
    }
  }
  const double log_classes = std::log(static_cast<double>(num_classes));
  const std::size_t positions = trace.steps.back().decodes.front().tokens.size();

  EntropyReport report;
  report.terminal_marginals = detail::step_marginals(trace.steps.back(), num_classes);
  report.terminal.resize(positions);
  for (std::size_t l = 0; l < positions; ++l) {
    report.terminal[l] = detail::normalized_entropy(report.terminal_marginals[l], log_classes);
  }
  report.aggregated.assign(positions, 0.0);
  for (int step : steps) {
    const auto marginals = detail::step_marginals(trace.steps[step - 1], num_classes);
    for (std::size_t l = 0; l < positions; ++l) {
      report.aggregated[l] += detail::normalized_entropy(marginals[l], log_classes);
    }
  }
  for (std::size_t l = 0; l < positions; ++l) report.aggregated[l] /= steps.size();
  report.contraction.resize(positions);
  for (std::size_t l = 0; l < positions; ++l) {
    report.contraction[l] = report.aggregated[l] - report.terminal[l];
  }
  return report;
}

/// Rank-sum AUROC with midranks for ties: the probability that a uniformly
/// chosen positive outranks a uniformly chosen negative, counting ties as
/// one half. nullopt when either class is empty.
inline std::optional<double> risk_ranking_auroc(const std::vector<double>& risk,
                                                const std::vector<std::uint8_t>& positive) {
  if (risk.size() != positive.size()) throw ConfigError("risk_ranking_auroc: length mismatch");
  const std::size_t n = risk.size();
  std::size_t n_pos = 0;
  for (std::uint8_t y : positive) n_pos += y ? 1 : 0;
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return risk[a] < risk[b]; });
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && risk[order[j + 1]] == risk[order[i]]) ++j;
    const double midrank = 0.5 * ((i + 1) + (j + 1));
    for (std::size_t k = i; k <= j; ++k) {
      if (positive[order[k]]) rank_sum_pos += midrank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos);
  const double nn = static_cast<double>(n_neg);
  return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

struct BootstrapInterval {
  double estimate = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  int resamples_used = 0;
};

/// Percentile bootstrap interval for the risk-ranking AUROC. Degenerate
/// resamples (single-class) are discarded; nullopt when the full sample is
/// degenerate or fewer than half the resamples survive.
inline std::optional<BootstrapInterval> auroc_bootstrap(
    const std::vector<double>& risk, const std::vector<std::uint8_t>& positive,
    int n_resamples, CounterRng& rng, double coverage = 0.95) {
  const std::optional<double> point = risk_ranking_auroc(risk, positive);
  if (!point.has_value()) return std::nullopt;
  if (n_resamples < 10) throw ConfigError("auroc_bootstrap: too few resamples");
  if (!(coverage > 0.0 && coverage < 1.0)) {
    throw ConfigError("auroc_bootstrap: coverage must lie in (0, 1)");
  }
  const std::size_t n = risk.size();
  std::vector<double> values;
  values.reserve(n_resamples);
  std::vector<double> r(n);
  std::vector<std::uint8_t> y(n);
  for (int b = 0; b < n_resamples; ++b) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t pick = static_cast<std::size_t>(rng.uniform() * n);
      r[i] = risk[pick];
      y[i] = positive[pick];
    }
    const std::optional<double> v = risk_ranking_auroc(r, y);
    if (v.has_value()) values.push_back(*v);
  }
  if (values.size() < static_cast<std::size_t>(n_resamples) / 2) return std::nullopt;
  std::sort(values.begin(), values.end());
  const double tail = 0.5 * (1.0 - coverage);
  const auto pick_quantile = [&](double q) {
    const double pos = q * (values.size() - 1);
    return values[static_cast<std::size_t>(std::lround(pos))];
  };
  BootstrapInterval out;
  out.estimate = *point;
  out.lower = pick_quantile(tail);
  out.upper = pick_quantile(1.0 - tail);
  out.resamples_used = static_cast<int>(values.size());
  return out;
}

struct AbstentionPoint {
  double fraction = 0.0;    // share of highest-risk items withheld
  double error_rate = 0.0;  // error rate among the answered rest
  int answered = 0;
};

/// Error rate after withholding the top risk fraction, one point per
/// requested fraction. Ties in risk break by original index so the curve is
/// deterministic.
inline std::vector<AbstentionPoint> abstention_curve(const std::vector<double>& risk,
                                                     const std::vector<std::uint8_t>& error,
                                                     const std::vector<double>& fractions) {
  if (risk.size() != error.size() || risk.empty()) {
    throw ConfigError("abstention_curve: length mismatch or empty input");
  }
  std::vector<std::size_t> order(risk.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return risk[a] > risk[b]; });
  std::vector<AbstentionPoint> curve;
  for (double f : fractions) {
    if (!(f >= 0.0 && f < 1.0)) throw ConfigError("abstention_curve: fraction out of [0, 1)");
    const std::size_t dropped = static_cast<std::size_t>(f * risk.size());
    AbstentionPoint point;
    point.fraction = f;
    point.answered = static_cast<int>(risk.size() - dropped);
    double errors = 0.0;
    for (std::size_t k = dropped; k < order.size(); ++k) errors += error[order[k]] ? 1.0 : 0.0;
    point.error_rate = errors / point.answered;
    curve.push_back(point);
  }
  return curve;
}

}  // namespace gse
