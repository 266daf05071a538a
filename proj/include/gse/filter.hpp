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
#include <limits>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "gse/backbone.hpp"
#include "gse/errors.hpp"
#include "gse/guide.hpp"
#include "gse/proposal.hpp"
#include "gse/rng.hpp"
#include "gse/state.hpp"

namespace gse {

/// Knobs of one guided-inference run. Defaults match the reference setup:
/// 16 particles, 48 outer steps of 6 inner refinements, moderate noise, and
/// resampling when the effective sample size drops below 0.3 * S.
struct InferenceConfig {
  int num_particles = 16;  // S
  int outer_depth = 48;    // N
  int inner_depth = 6;     // M
  double sigma = 0.25;
  double beta = 0.25;
  double tau_ess = 0.3;
  std::uint64_t seed = 0;
  bool resample = true;

  void validate() const {
    if (num_particles < 1) throw ConfigError("InferenceConfig: num_particles must be >= 1");
    if (outer_depth < 1) throw ConfigError("InferenceConfig: outer_depth must be >= 1");
    if (inner_depth < 1) throw ConfigError("InferenceConfig: inner_depth must be >= 1");
    if (!(sigma >= 0.0)) throw ConfigError("InferenceConfig: sigma must be >= 0");
    if (!(beta >= 0.0)) throw ConfigError("InferenceConfig: beta must be >= 0");
    if (!(tau_ess >= 0.0 && tau_ess <= 1.0)) {
      throw ConfigError("InferenceConfig: tau_ess must lie in [0, 1]");
    }
  }
};

/// Everything observable about one outer step. Scores, weights, and decodes
/// describe the cloud after propagation and tempering but before any
/// resampling; ancestors (present iff resampled) map the post-resampling
/// cloud back into that record.
struct StepRecord {
  int step = 0;  // 1-based outer step index
  std::vector<double> guide_scores;
  std::vector<double> log_weights;  // normalized, post-temper / pre-resample
  double ess_ratio = 0.0;
  bool resampled = false;
  std::vector<int> ancestors;  // 0-based, empty unless resampled
  bool weight_reset = false;   // degenerate-weights fallback fired
  std::vector<TokenGrid> decodes;
  // Squared deviations |zeta_m - z_m|^2 from the noise-free recursion,
  // indexed [particle][inner step]; filled only when tracking is requested.
  std::vector<std::vector<double>> inner_deviation_sq;
};

struct RunTrace {
  InferenceConfig config;
  std::uint32_t instance = 0;
  std::vector<StepRecord> steps;
};

struct RunResult {
  TokenGrid answer;
  RunTrace trace;
};

struct RunOptions {
  bool track_deviations = false;
};

struct TemperedUpdate {
  WeightVector weights;
  std::vector<double> log_weights;
};

/// Multiplies weights by the tempered potential exp(beta * score) and
/// renormalizes, entirely in the log domain. Weights come back as
/// exp(normalized log weight), so serialized log weights reproduce the
/// weight vector bit for bit. Throws DegenerateWeightsError when no finite
/// mass survives.
inline TemperedUpdate tempered_update(const std::vector<double>& log_weights,
                                      const std::vector<double>& scores, double beta) {
  if (log_weights.empty() || log_weights.size() != scores.size()) {
    throw ConfigError("tempered_update: weight and score lengths differ");
  }
  if (!(beta >= 0.0)) throw ConfigError("tempered_update: beta must be >= 0");
  const std::size_t n = log_weights.size();
  std::vector<double> tilted(n);
  double peak = -std::numeric_limits<double>::infinity();
  for (std::size_t s = 0; s < n; ++s) {
    tilted[s] = log_weights[s] + beta * scores[s];
    if (std::isnan(tilted[s]) || tilted[s] == std::numeric_limits<double>::infinity()) {
      throw DegenerateWeightsError("tempered_update: non-finite tilted log weight");
    }
    peak = std::max(peak, tilted[s]);
  }
  if (!std::isfinite(peak)) {
    throw DegenerateWeightsError("tempered_update: all tilted weights vanish");
  }
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) total += std::exp(tilted[s] - peak);
  const double log_z = peak + std::log(total);
  TemperedUpdate out;
  out.log_weights.resize(n);
  out.weights.w.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    out.log_weights[s] = tilted[s] - log_z;
    out.weights.w[s] = std::exp(out.log_weights[s]);
  }
  return out;
}

/// Systematic resampling: inverts the weight CDF at the stratified positions
/// (s + offset) / S for s = 0..S-1, sharing the single uniform offset across
/// strata. Ancestor s is the smallest index whose CDF strictly exceeds its
/// position. Ancestors come back 0-based and nondecreasing.
inline std::vector<int> systematic_resample(const WeightVector& weights, double offset) {
  const int n = weights.size();
  if (n < 1) throw ConfigError("systematic_resample: empty weight vector");
  if (!(offset >= 0.0 && offset < 1.0)) {
    throw ConfigError("systematic_resample: offset must lie in [0, 1)");
  }
  std::vector<int> ancestors(n);
  double cdf = weights.w[0];
  int j = 0;
  for (int s = 0; s < n; ++s) {
    const double position = (s + offset) / n;
    while (cdf <= position && j + 1 < n) {
      ++j;
      cdf += weights.w[j];
    }
    ancestors[s] = j;
  }
  return ancestors;
}

/// Groups particles by decoded answer, sums weight per group, and returns the
/// heaviest answer. Exact ties go to the lexicographically smallest token
/// sequence, so the result never depends on particle order.
inline TokenGrid weighted_map_from(const std::vector<TokenGrid>& decodes,
                                   const WeightVector& weights) {
  if (decodes.empty() || static_cast<int>(decodes.size()) != weights.size()) {
    throw ConfigError("weighted_map_from: decode and weight lengths differ");
  }
  std::map<std::vector<int>, double> mass;
  for (std::size_t s = 0; s < decodes.size(); ++s) {
    mass[decodes[s].tokens] += weights.w[s];
  }
  const int num_classes = decodes.front().num_classes;
  auto best = mass.begin();
  for (auto it = std::next(mass.begin()); it != mass.end(); ++it) {
    // Strict inequality keeps the earliest (lexicographically smallest) key.
    if (it->second > best->second) best = it;
  }
  return TokenGrid{best->first, num_classes};
}

inline TokenGrid weighted_map_decode(const ParticleCloud& cloud,
                                     const ArgmaxDecoder& decoder) {
  std::vector<TokenGrid> decodes;
  decodes.reserve(cloud.particles.size());
  for (const JointState& h : cloud.particles) decodes.push_back(decode(h, decoder));
  return weighted_map_from(decodes, cloud.weights);
}

/// Reconstructs the post-resampling cloud of a terminal step record and
/// replays the weighted MAP readout from it. Produces the same tokens as the
/// live run because decodes and log weights round-trip exactly.
inline TokenGrid map_answer_from_record(const StepRecord& record) {
  const int n = static_cast<int>(record.decodes.size());
  if (n == 0) throw ConfigError("map_answer_from_record: record has no decodes");
  std::vector<TokenGrid> decodes;
  decodes.reserve(n);
  WeightVector weights;
  if (record.resampled) {
    if (static_cast<int>(record.ancestors.size()) != n) {
      throw ConfigError("map_answer_from_record: ancestor count mismatch");
    }
    for (int s = 0; s < n; ++s) decodes.push_back(record.decodes[record.ancestors[s]]);
    weights = uniform_weights(n);
  } else {
    decodes = record.decodes;
    weights.w.resize(n);
    for (int s = 0; s < n; ++s) weights.w[s] = std::exp(record.log_weights[s]);
  }
  return weighted_map_from(decodes, weights);
}

/// Whether any particle of the post-resampling terminal cloud decodes to the
/// target; the oracle-selection upper bound for the run.
inline bool record_cloud_contains(const StepRecord& record, const TokenGrid& target) {
  if (record.resampled) {
    for (int a : record.ancestors) {
      if (record.decodes[a] == target) return true;
    }
    return false;
  }
  for (const TokenGrid& d : record.decodes) {
    if (d == target) return true;
  }
  return false;
}

/// Runs the guided stochastic search: S particles evolve through N tempered
/// propagation steps, resampling systematically whenever the effective
/// sample size falls below tau_ess * S, and the weighted MAP answer of the
/// terminal cloud is returned together with the full per-step trace.
///
/// All randomness is drawn from counter streams addressed by
/// (seed, instance, particle, step), so results are reproducible and
/// independent of evaluation order. With sigma = 0 and S = 1 the run follows
/// the deterministic recursion exactly.
inline RunResult run_guided_inference(const InferenceConfig& config,
                                      const BackboneSpec& backbone,
                                      const GuideSpec& guide,
                                      const ArgmaxDecoder& decoder,
                                      const TaskInstance& task,
                                      const RunOptions& options = {}) {
  config.validate();
  const int S = config.num_particles;
  const int N = config.outer_depth;
  const int M = config.inner_depth;

  NoiseConfig noise;
  noise.sigma = config.sigma;

  std::vector<JointState> particles(S, task.h0);
  std::vector<double> log_weights(S, -std::log(static_cast<double>(S)));
  WeightVector weights = uniform_weights(S);
  JointState reference = task.h0;  // noise-free companion for deviation tracking

  RunResult result;
  result.trace.config = config;
  result.trace.instance = task.index;
  result.trace.steps.reserve(N);

  for (int n = 0; n < N; ++n) {
    StepRecord record;
    record.step = n + 1;
    record.guide_scores.resize(S);
    record.decodes.resize(S);

    std::vector<LatentTensor> reference_inner;
    if (options.track_deviations) {
      reference_inner = inner_rollout(backbone, task.x, reference, M);
      record.inner_deviation_sq.resize(S);
    }

    for (int s = 0; s < S; ++s) {
      CounterRng rng(config.seed, StreamDomain::kProposal, task.index,
                     static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(n));
      TrajectoryDraw draw =
          trajectory_sampler(backbone, task.x, particles[s], M, noise, rng);
      if (options.track_deviations) {
        record.inner_deviation_sq[s].resize(M);
        for (int m = 0; m < M; ++m) {
          record.inner_deviation_sq[s][m] =
              squared_distance(draw.inner[m], reference_inner[m]);
        }
      }
      particles[s] = std::move(draw.next);
      record.guide_scores[s] = guide_score(guide, particles[s]);
      record.decodes[s] = decode(particles[s], decoder);
    }

    try {
      TemperedUpdate update = tempered_update(log_weights, record.guide_scores, config.beta);
      log_weights = std::move(update.log_weights);
      weights = std::move(update.weights);
    } catch (const DegenerateWeightsError&) {
      log_weights.assign(S, -std::log(static_cast<double>(S)));
      weights = uniform_weights(S);
      record.weight_reset = true;
    }
    record.log_weights = log_weights;
    record.ess_ratio = ess(weights) / S;

    if (config.resample && record.ess_ratio < config.tau_ess) {
      CounterRng resample_rng(config.seed, StreamDomain::kResample, task.index, 0,
                              static_cast<std::uint32_t>(n));
      record.ancestors = systematic_resample(weights, resample_rng.uniform());
      record.resampled = true;
      std::vector<JointState> resampled;
      resampled.reserve(S);
      for (int a : record.ancestors) resampled.push_back(particles[a]);
      particles = std::move(resampled);
      log_weights.assign(S, -std::log(static_cast<double>(S)));
      weights = uniform_weights(S);
    }

    if (options.track_deviations) {
      reference.z = std::move(reference_inner.back());
      reference.y = backbone.apply(reference.y + reference.z);
    }

    result.trace.steps.push_back(std::move(record));
  }

  result.answer = map_answer_from_record(result.trace.steps.back());
  return result;
}

}  // namespace gse
