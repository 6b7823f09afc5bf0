// Copyright 2026 The MPRLab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "mprlab/config.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <istream>
#include <ostream>
#include <string>

namespace mprlab {
namespace orchestrator {
namespace {

std::string Trim(const std::string& text) {
  const char* space = " \t\r\n";
  size_t begin = text.find_first_not_of(space);
  if (begin == std::string::npos) return "";
  size_t end = text.find_last_not_of(space);
  return text.substr(begin, end - begin + 1);
}

int ParseInt(const std::string& key, const std::string& value) {
  int result = 0;
  auto [ptr, ec] =
      std::from_chars(value.data(), value.data() + value.size(), result);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    Fail("config key " + key + ": expected an integer, got '" + value + "'");
  }
  return result;
}

uint64_t ParseUnsigned(const std::string& key, const std::string& value) {
  uint64_t result = 0;
  auto [ptr, ec] =
      std::from_chars(value.data(), value.data() + value.size(), result);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    Fail("config key " + key + ": expected a non-negative integer, got '" +
         value + "'");
  }
  return result;
}

double ParseReal(const std::string& key, const std::string& value) {
  double result = 0.0;
  auto [ptr, ec] =
      std::from_chars(value.data(), value.data() + value.size(), result);
  if (ec != std::errc() || ptr != value.data() + value.size() ||
      !std::isfinite(result)) {
    Fail("config key " + key + ": expected a finite number, got '" + value +
         "'");
  }
  return result;
}

bool ParseBool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  Fail("config key " + key + ": expected true or false, got '" + value + "'");
}

Algorithm ParseAlgorithm(const std::string& value) {
  if (value == "dqn") return Algorithm::kDqn;
  if (value == "ppo") return Algorithm::kPpo;
  Fail("unknown algorithm '" + value + "' (expected dqn or ppo)");
}

struct Field {
  std::string key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

// `member` is a generic lambda returning a reference to one field, so it
// serves both the const getter and the setter.
template <typename F>
Field IntField(std::string key, F member) {
  return {key,
          [key, member](ExperimentConfig& c, const std::string& v) {
            member(c) = ParseInt(key, v);
          },
          [member](const ExperimentConfig& c) {
            return std::to_string(member(c));
          }};
}

template <typename F>
Field RealField(std::string key, F member) {
  return {key,
          [key, member](ExperimentConfig& c, const std::string& v) {
            member(c) = ParseReal(key, v);
          },
          [member](const ExperimentConfig& c) {
            return FormatDouble(member(c));
          }};
}

template <typename F>
Field BoolField(std::string key, F member) {
  return {key,
          [key, member](ExperimentConfig& c, const std::string& v) {
            member(c) = ParseBool(key, v);
          },
          [member](const ExperimentConfig& c) {
            return std::string(member(c) ? "true" : "false");
          }};
}

#define MPRLAB_INT(key, expr) \
  IntField(key, [](auto& c) -> auto& { return c.expr; })
#define MPRLAB_REAL(key, expr) \
  RealField(key, [](auto& c) -> auto& { return c.expr; })
#define MPRLAB_BOOL(key, expr) \
  BoolField(key, [](auto& c) -> auto& { return c.expr; })

// `env` is handled separately because it resets every other field.
const std::vector<Field>& Fields() {
  static const std::vector<Field>* fields = new std::vector<Field>{
      {"algorithm",
       [](ExperimentConfig& c, const std::string& v) {
         c.algorithm = ParseAlgorithm(v);
       },
       [](const ExperimentConfig& c) { return AlgorithmName(c.algorithm); }},
      {"seed",
       [](ExperimentConfig& c, const std::string& v) {
         c.seed = ParseUnsigned("seed", v);
       },
       [](const ExperimentConfig& c) { return std::to_string(c.seed); }},
      {"encoder.mode",
       [](ExperimentConfig& c, const std::string& v) {
         c.mode = ParseEncoderMode(v);
       },
       [](const ExperimentConfig& c) { return EncoderModeName(c.mode); }},
      MPRLAB_INT("encoder.batch_size", encoder.batch_size),
      MPRLAB_REAL("encoder.learning_rate", encoder.learning_rate),
      MPRLAB_REAL("encoder.grad_clip", encoder.grad_clip),
      MPRLAB_REAL("encoder.target_scale", encoder.target_scale),
      MPRLAB_REAL("encoder.triplet_margin", encoder.triplet_margin),
      MPRLAB_INT("encoder.history_capacity", encoder.history_capacity),
      MPRLAB_REAL("distance.smoothing", distance.smoothing),
      MPRLAB_INT("distance.projections", distance.projections),
      MPRLAB_INT("orchestrator.iterations", iterations),
      MPRLAB_INT("orchestrator.num_sample", num_sample),
      MPRLAB_INT("orchestrator.num_collect", num_collect),
      MPRLAB_INT("orchestrator.resample_period", resample_period),
      MPRLAB_INT("orchestrator.rl_updates_per_iteration",
                 rl_updates_per_iteration),
      MPRLAB_INT("orchestrator.encoder_updates_per_iteration",
                 encoder_updates_per_iteration),
      MPRLAB_INT("orchestrator.learning_starts", learning_starts),
      MPRLAB_INT("orchestrator.replay_refresh_period", replay_refresh_period),
      MPRLAB_INT("orchestrator.test_interval_steps", test_interval_steps),
      MPRLAB_INT("orchestrator.test_episodes", test_episodes),
      MPRLAB_INT("orchestrator.moving_average_window", moving_average_window),
      MPRLAB_INT("orchestrator.workers", workers),
      MPRLAB_INT("orchestrator.export_episodes", export_episodes),
      MPRLAB_INT("orchestrator.mds_last_steps", mds_last_steps),
      MPRLAB_BOOL("orchestrator.checkpoints", checkpoints),
      MPRLAB_REAL("rl.dqn.gamma", dqn.gamma),
      MPRLAB_REAL("rl.dqn.learning_rate", dqn.learning_rate),
      MPRLAB_INT("rl.dqn.batch_size", dqn.batch_size),
      MPRLAB_INT("rl.dqn.target_sync_period", dqn.target_sync_period),
      MPRLAB_REAL("rl.dqn.huber_delta", dqn.huber_delta),
      MPRLAB_INT("rl.dqn.replay_capacity", dqn.replay_capacity),
      MPRLAB_REAL("rl.dqn.epsilon_start", dqn.epsilon_start),
      MPRLAB_REAL("rl.dqn.epsilon_end", dqn.epsilon_end),
      MPRLAB_REAL("rl.dqn.epsilon_fraction", dqn.epsilon_fraction),
      MPRLAB_REAL("rl.dqn.grad_clip", dqn.grad_clip),
      MPRLAB_REAL("rl.ppo.gamma", ppo.gamma),
      MPRLAB_REAL("rl.ppo.gae_lambda", ppo.gae_lambda),
      MPRLAB_REAL("rl.ppo.clip", ppo.clip),
      MPRLAB_REAL("rl.ppo.entropy_coef", ppo.entropy_coef),
      MPRLAB_REAL("rl.ppo.value_coef", ppo.value_coef),
      MPRLAB_REAL("rl.ppo.learning_rate", ppo.learning_rate),
      MPRLAB_REAL("rl.ppo.grad_clip", ppo.grad_clip),
      MPRLAB_INT("rl.ppo.minibatch_size", ppo.minibatch_size),
      MPRLAB_INT("rl.ppo.minibatches_per_update", ppo.minibatches_per_update),
      MPRLAB_REAL("rl.ppo.action_bound", ppo.action_bound),
      MPRLAB_REAL("rl.ppo.initial_log_std", ppo.initial_log_std),
      MPRLAB_BOOL("rl.ppo.normalize_advantages", ppo.normalize_advantages),
      MPRLAB_REAL("env.push.attacker_mass", env_config.push.attacker_mass),
      MPRLAB_REAL("env.push.attacker_radius", env_config.push.attacker_radius),
      MPRLAB_REAL("env.push.attacker_accel", env_config.push.attacker_accel),
      MPRLAB_REAL("env.push.attacker_max_speed",
                  env_config.push.attacker_max_speed),
      MPRLAB_REAL("env.push.defender_mass", env_config.push.defender_mass),
      MPRLAB_REAL("env.push.defender_radius", env_config.push.defender_radius),
      MPRLAB_REAL("env.push.defender_accel", env_config.push.defender_accel),
      MPRLAB_REAL("env.push.defender_max_speed",
                  env_config.push.defender_max_speed),
      MPRLAB_REAL("env.push.landmark_radius", env_config.push.landmark_radius),
      MPRLAB_REAL("env.push.damping", env_config.push.damping),
      MPRLAB_REAL("env.push.dt", env_config.push.dt),
      MPRLAB_REAL("env.push.spawn_range", env_config.push.spawn_range),
      MPRLAB_REAL("env.push.contact_force", env_config.push.contact_force),
      MPRLAB_REAL("env.push.contact_margin", env_config.push.contact_margin),
      MPRLAB_REAL("env.push.defender_stop_radius",
                  env_config.push.defender_stop_radius),
      MPRLAB_REAL("env.push.touch_reward", env_config.push.touch_reward),
      MPRLAB_REAL("env.push.collision_penalty",
                  env_config.push.collision_penalty),
      MPRLAB_INT("env.push.horizon", env_config.push.horizon),
      MPRLAB_REAL("env.keep.ball_mass", env_config.keep.ball_mass),
      MPRLAB_REAL("env.keep.damping", env_config.keep.damping),
      MPRLAB_REAL("env.keep.dt", env_config.keep.dt),
      MPRLAB_REAL("env.keep.max_ego_force", env_config.keep.max_ego_force),
      MPRLAB_REAL("env.keep.spawn_range", env_config.keep.spawn_range),
      MPRLAB_INT("env.keep.horizon", env_config.keep.horizon),
      MPRLAB_REAL("env.keep.test_angle_lo", env_config.keep.test_angle_lo),
      MPRLAB_REAL("env.keep.test_angle_hi", env_config.keep.test_angle_hi),
      MPRLAB_REAL("env.keep.test_distance_lo",
                  env_config.keep.test_distance_lo),
      MPRLAB_REAL("env.keep.test_distance_hi",
                  env_config.keep.test_distance_hi),
      MPRLAB_REAL("env.keep.test_force_lo", env_config.keep.test_force_lo),
      MPRLAB_REAL("env.keep.test_force_hi", env_config.keep.test_force_hi),
  };
  return *fields;
}

#undef MPRLAB_INT
#undef MPRLAB_REAL
#undef MPRLAB_BOOL

const Field* FindField(const std::string& key) {
  for (const Field& field : Fields()) {
    if (field.key == key) return &field;
  }
  return nullptr;
}

[[noreturn]] void UnknownKey(const std::string& key) {
  std::string message = "unknown config key '" + key + "'; valid keys are:";
  for (const std::string& k : ConfigKeys()) message += "\n  " + k;
  Fail(message);
}

}  // namespace

std::string AlgorithmName(Algorithm algorithm) {
  return algorithm == Algorithm::kDqn ? "dqn" : "ppo";
}

std::string EncoderModeName(EncoderMode mode) {
  switch (mode) {
    case EncoderMode::kNone:
      return "none";
    case EncoderMode::kMprNoRs:
      return "mpr-nors";
    case EncoderMode::kMprRs:
      return "mpr-rs";
    case EncoderMode::kTriplet:
      return "triplet";
    case EncoderMode::kActPred:
      return "actpred";
  }
  Fail("unknown encoder mode");
}

EncoderMode ParseEncoderMode(const std::string& name) {
  for (EncoderMode mode :
       {EncoderMode::kNone, EncoderMode::kMprNoRs, EncoderMode::kMprRs,
        EncoderMode::kTriplet, EncoderMode::kActPred}) {
    if (EncoderModeName(mode) == name) return mode;
  }
  Fail("unknown encoder mode '" + name +
       "' (expected none, mpr-nors, mpr-rs, triplet or actpred)");
}

int ExperimentConfig::EffectiveResamplePeriod() const {
  if (resample_period > 0) return resample_period;
  return std::max(1, iterations / 10);
}

ExperimentConfig DefaultConfig(envs::EnvId env) {
  ExperimentConfig config;
  config.env = env;
  if (env == envs::EnvId::kPush) {
    config.algorithm = Algorithm::kDqn;
    config.iterations = 2000;  // 100k steps of 50-step episodes
    config.num_collect = 1;
    config.rl_updates_per_iteration = 50;
    config.encoder_updates_per_iteration = 1;
    config.learning_starts = 1000;
    config.replay_refresh_period = 50;
    config.test_interval_steps = 1000;
    config.test_episodes = 10;
    config.mds_last_steps = 10;
    config.encoder.batch_size = 16;
    config.encoder.learning_rate = 1e-3;
    config.dqn.learning_rate = 1e-3;
    config.dqn.batch_size = 64;
  } else {
    config.algorithm = Algorithm::kPpo;
    config.iterations = 300;
    config.num_collect = 64;
    config.rl_updates_per_iteration = 80;
    config.encoder_updates_per_iteration = 15;
    config.test_episodes = 20;
    config.mds_last_steps = 0;
    config.encoder.batch_size = 20;
    config.encoder.learning_rate = 3e-4;
    config.encoder.history_capacity = 640;
    config.ppo.learning_rate = 3e-4;
    config.ppo.minibatches_per_update = 80;
    config.ppo.minibatch_size = 1024;
  }
  return config;
}

void Validate(const ExperimentConfig& c) {
  auto positive = [](int value, const std::string& key) {
    Check(value > 0, "config key " + key + " must be positive");
  };
  positive(c.iterations, "orchestrator.iterations");
  positive(c.num_sample, "orchestrator.num_sample");
  positive(c.num_collect, "orchestrator.num_collect");
  positive(c.test_episodes, "orchestrator.test_episodes");
  positive(c.moving_average_window, "orchestrator.moving_average_window");
  positive(c.workers, "orchestrator.workers");
  positive(c.encoder.batch_size, "encoder.batch_size");
  positive(c.encoder.history_capacity, "encoder.history_capacity");
  positive(c.distance.projections, "distance.projections");
  Check(c.rl_updates_per_iteration >= 0 &&
            c.encoder_updates_per_iteration >= 0 && c.learning_starts >= 0 &&
            c.export_episodes >= 0 && c.mds_last_steps >= 0 &&
            c.replay_refresh_period >= 0,
        "orchestrator counts must be non-negative");
  Check(c.algorithm == Algorithm::kDqn || c.replay_refresh_period == 0,
        "orchestrator.replay_refresh_period needs a replay buffer (algorithm = dqn)");
  Check(c.resample_period >= 0,
        "config key orchestrator.resample_period must be non-negative");
  if (c.mode != EncoderMode::kMprRs) {
    Check(c.resample_period == 0,
          "orchestrator.resample_period is only meaningful with encoder.mode "
          "= mpr-rs");
  }
  Check(c.distance.smoothing > 0.0, "distance.smoothing must be positive");
  Check(c.encoder.learning_rate > 0.0, "encoder.learning_rate must be positive");
  Check(c.encoder.target_scale > 0.0, "encoder.target_scale must be positive");
  if (c.algorithm == Algorithm::kDqn) {
    Check(c.env == envs::EnvId::kPush,
          "dqn needs a discrete action space (env = push)");
    positive(c.test_interval_steps, "orchestrator.test_interval_steps");
    positive(c.dqn.batch_size, "rl.dqn.batch_size");
    positive(c.dqn.target_sync_period, "rl.dqn.target_sync_period");
    positive(c.dqn.replay_capacity, "rl.dqn.replay_capacity");
    Check(c.dqn.learning_rate > 0.0, "rl.dqn.learning_rate must be positive");
    Check(c.dqn.gamma >= 0.0 && c.dqn.gamma <= 1.0,
          "rl.dqn.gamma must lie in [0, 1]");
    for (double eps : {c.dqn.epsilon_start, c.dqn.epsilon_end}) {
      Check(eps >= 0.0 && eps <= 1.0, "epsilon values must lie in [0, 1]");
    }
    Check(c.dqn.epsilon_fraction > 0.0 && c.dqn.epsilon_fraction <= 1.0,
          "rl.dqn.epsilon_fraction must lie in (0, 1]");
  } else {
    Check(c.env == envs::EnvId::kKeep,
          "ppo is implemented for the continuous-action env (env = keep)");
    positive(c.ppo.minibatch_size, "rl.ppo.minibatch_size");
    Check(c.ppo.learning_rate > 0.0, "rl.ppo.learning_rate must be positive");
    Check(c.ppo.gamma >= 0.0 && c.ppo.gamma <= 1.0,
          "rl.ppo.gamma must lie in [0, 1]");
    Check(c.ppo.gae_lambda >= 0.0 && c.ppo.gae_lambda <= 1.0,
          "rl.ppo.gae_lambda must lie in [0, 1]");
    Check(c.ppo.clip > 0.0, "rl.ppo.clip must be positive");
    Check(c.ppo.action_bound > 0.0, "rl.ppo.action_bound must be positive");
  }
  positive(c.env_config.push.horizon, "env.push.horizon");
  positive(c.env_config.keep.horizon, "env.keep.horizon");
}

std::vector<std::string> ConfigKeys() {
  std::vector<std::string> keys = {"env"};
  for (const Field& field : Fields()) keys.push_back(field.key);
  return keys;
}

std::pair<std::string, std::string> ParseOverride(const std::string& text) {
  size_t eq = text.find('=');
  Check(eq != std::string::npos,
        "expected key=value, got '" + text + "'");
  std::string key = Trim(text.substr(0, eq));
  Check(!key.empty(), "empty key in '" + text + "'");
  return {key, Trim(text.substr(eq + 1))};
}

ExperimentConfig ConfigFromPairs(
    const std::vector<std::pair<std::string, std::string>>& pairs) {
  // The last `env` wins and selects the defaults for everything else.
  envs::EnvId env = envs::EnvId::kPush;
  for (const auto& [key, value] : pairs) {
    if (key == "env") env = envs::ParseEnvId(value);
  }
  ExperimentConfig config = DefaultConfig(env);
  for (const auto& [key, value] : pairs) {
    if (key == "env") continue;
    const Field* field = FindField(key);
    if (field == nullptr) UnknownKey(key);
    field->set(config, value);
  }
  Validate(config);
  return config;
}

ExperimentConfig ParseConfig(
    std::istream& in,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::vector<std::pair<std::string, std::string>> pairs;
  std::string line;
  int line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    if (line.find('=') == std::string::npos) {
      Fail("config line " + std::to_string(line_number) +
           ": expected key = value");
    }
    pairs.push_back(ParseOverride(line));
  }
  pairs.insert(pairs.end(), overrides.begin(), overrides.end());
  return ConfigFromPairs(pairs);
}

void WriteConfig(const ExperimentConfig& config, std::ostream& out) {
  out << "env = " << envs::EnvName(config.env) << "\n";
  for (const Field& field : Fields()) {
    out << field.key << " = " << field.get(config) << "\n";
  }
}

}  // namespace orchestrator
}  // namespace mprlab
