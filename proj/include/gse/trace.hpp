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
#include <fstream>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "gse/errors.hpp"
#include "gse/filter.hpp"
#include "gse/guide.hpp"
#include "gse/state.hpp"

namespace gse {

/// Serializable guide description; the harness builds the actual GuideSpec
/// from it per instance (the oracle needs the instance's solution).
struct GuideConfig {
  std::string type = "oracle";  // "oracle" or "flat"
  double kappa = 4.0;           // oracle sharpness
  double level = 0.0;           // flat logit level
  double jitter = 0.01;         // flat state-hash amplitude
};

inline GuideSpec build_guide(const GuideConfig& config,
                             const std::optional<TokenGrid>& solution,
                             const ArgmaxDecoder& decoder) {
  if (config.type == "oracle") {
    if (!solution.has_value()) {
      throw ConfigError("build_guide: oracle guide needs a ground-truth solution");
    }
    return make_oracle_guide(*solution, decoder, config.kappa);
  }
  if (config.type == "flat") return make_flat_guide(config.level, config.jitter);
  throw ConfigError("build_guide: unknown guide type " + config.type);
}

/// Token grids travel as digit strings ("3142" for tokens 3,1,4,2), which
/// keeps trace files compact. Only alphabets up to 9 symbols are encodable.
inline std::string tokens_to_string(const TokenGrid& grid) {
  if (grid.num_classes > 9) throw ConfigError("tokens_to_string: more than 9 classes");
  std::string out;
  out.reserve(grid.tokens.size());
  for (int t : grid.tokens) {
    if (t < 1 || t > grid.num_classes) throw ConfigError("tokens_to_string: token out of range");
    out.push_back(static_cast<char>('0' + t));
  }
  return out;
}

inline TokenGrid tokens_from_string(const std::string& s, int num_classes) {
  TokenGrid grid;
  grid.num_classes = num_classes;
  grid.tokens.reserve(s.size());
  for (char c : s) {
    const int t = c - '0';
    if (t < 1 || t > num_classes) throw ConfigError("tokens_from_string: bad digit");
    grid.tokens.push_back(t);
  }
  return grid;
}

/// Identity of one run within an experiment; stored in the trace header so
/// every summary number is recomputable from trace files alone.
struct TraceMeta {
  std::string run_id;
  std::string kind;  // "guided", "unguided", or "baseline"
  std::uint32_t instance = 0;
  std::string instance_id;
  int fold = -1;  // -1 marks the validation reserve
  std::string point;
  InferenceConfig config;
  GuideConfig guide;
};

namespace detail {

inline nlohmann::json config_json(const InferenceConfig& c) {
  return {{"S", c.num_particles}, {"N", c.outer_depth}, {"M", c.inner_depth},
          {"sigma", c.sigma},     {"beta", c.beta},     {"tau_ess", c.tau_ess},
          {"seed", c.seed},       {"resample", c.resample}};
}

// Missing keys keep the struct defaults so hand-written plans may stay
// minimal; traces always serialize every key.
inline InferenceConfig config_from_json(const nlohmann::json& j) {
  InferenceConfig c;
  c.num_particles = j.value("S", c.num_particles);
  c.outer_depth = j.value("N", c.outer_depth);
  c.inner_depth = j.value("M", c.inner_depth);
  c.sigma = j.value("sigma", c.sigma);
  c.beta = j.value("beta", c.beta);
  c.tau_ess = j.value("tau_ess", c.tau_ess);
  c.seed = j.value("seed", c.seed);
  c.resample = j.value("resample", c.resample);
  return c;
}

inline nlohmann::json guide_json(const GuideConfig& g) {
  return {{"type", g.type}, {"kappa", g.kappa}, {"level", g.level}, {"jitter", g.jitter}};
}

inline GuideConfig guide_from_json(const nlohmann::json& j) {
  GuideConfig g;
  g.type = j.value("type", g.type);
  g.kappa = j.value("kappa", g.kappa);
  g.level = j.value("level", g.level);
  g.jitter = j.value("jitter", g.jitter);
  return g;
}

}  // namespace detail

/// Writes one run as line-delimited JSON: a header record, one record per
/// outer step, and a final record with the MAP answer.
inline void write_trace(const std::string& path, const TraceMeta& meta,
                        const RunTrace& trace, const TokenGrid& answer) {
  std::ofstream out(path);
  if (!out) throw ConfigError("write_trace: cannot open " + path);
  nlohmann::json header = {{"record", "header"},
                           {"run_id", meta.run_id},
                           {"kind", meta.kind},
                           {"instance", meta.instance},
                           {"instance_id", meta.instance_id},
                           {"fold", meta.fold},
                           {"point", meta.point},
                           {"config", detail::config_json(meta.config)},
                           {"guide", detail::guide_json(meta.guide)}};
  out << header.dump() << "\n";
  for (const StepRecord& step : trace.steps) {
    nlohmann::json record = {{"record", "step"},
                             {"step", step.step},
                             {"scores", step.guide_scores},
                             {"log_weights", step.log_weights},
                             {"ess_ratio", step.ess_ratio},
                             {"resampled", step.resampled}};
    if (step.resampled) record["ancestors"] = step.ancestors;
    if (step.weight_reset) record["weight_reset"] = true;
    std::vector<std::string> decodes;
    decodes.reserve(step.decodes.size());
    for (const TokenGrid& d : step.decodes) decodes.push_back(tokens_to_string(d));
    record["decodes"] = std::move(decodes);
    if (!step.inner_deviation_sq.empty()) record["inner_dev_sq"] = step.inner_deviation_sq;
    out << record.dump() << "\n";
  }
  nlohmann::json final_record = {{"record", "final"},
                                 {"answer", tokens_to_string(answer)}};
  out << final_record.dump() << "\n";
}

struct LoadedTrace {
  TraceMeta meta;
  RunTrace trace;
  TokenGrid answer;
};

inline LoadedTrace load_trace(const std::string& path, int num_classes) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_trace: cannot open " + path);
  LoadedTrace loaded;
  std::string line;
  bool saw_header = false;
  bool saw_final = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("load_trace: malformed record in " + path + ": " + e.what());
    }
    const std::string record = j.at("record").get<std::string>();
    if (record == "header") {
      loaded.meta.run_id = j.at("run_id").get<std::string>();
      loaded.meta.kind = j.at("kind").get<std::string>();
      loaded.meta.instance = j.at("instance").get<std::uint32_t>();
      loaded.meta.instance_id = j.at("instance_id").get<std::string>();
      loaded.meta.fold = j.at("fold").get<int>();
      loaded.meta.point = j.at("point").get<std::string>();
      loaded.meta.config = detail::config_from_json(j.at("config"));
      loaded.meta.guide = detail::guide_from_json(j.at("guide"));
      loaded.trace.config = loaded.meta.config;
      loaded.trace.instance = loaded.meta.instance;
      saw_header = true;
    } else if (record == "step") {
      StepRecord step;
      step.step = j.at("step").get<int>();
      step.guide_scores = j.at("scores").get<std::vector<double>>();
      step.log_weights = j.at("log_weights").get<std::vector<double>>();
      step.ess_ratio = j.at("ess_ratio").get<double>();
      step.resampled = j.at("resampled").get<bool>();
      if (step.resampled) step.ancestors = j.at("ancestors").get<std::vector<int>>();
      if (j.contains("weight_reset")) step.weight_reset = j.at("weight_reset").get<bool>();
      for (const nlohmann::json& d : j.at("decodes")) {
        step.decodes.push_back(tokens_from_string(d.get<std::string>(), num_classes));
      }
      if (j.contains("inner_dev_sq")) {
        step.inner_deviation_sq = j.at("inner_dev_sq").get<std::vector<std::vector<double>>>();
      }
      loaded.trace.steps.push_back(std::move(step));
    } else if (record == "final") {
      loaded.answer = tokens_from_string(j.at("answer").get<std::string>(), num_classes);
      saw_final = true;
    } else {
      throw ConfigError("load_trace: unknown record type " + record);
    }
  }
  if (!saw_header || !saw_final) {
    throw ConfigError("load_trace: incomplete trace " + path);
  }
  if (static_cast<int>(loaded.trace.steps.size()) != loaded.meta.config.outer_depth) {
    throw ConfigError("load_trace: step count does not match config in " + path);
  }
  return loaded;
}

}  // namespace gse
