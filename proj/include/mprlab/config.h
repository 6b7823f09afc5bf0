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

#ifndef MPRLAB_CONFIG_H_
#define MPRLAB_CONFIG_H_

// Experiment configuration as flat `key = value` text. Keys carry a section
// prefix (env., rl., encoder., orchestrator., distance.) except for the
// three top-level choices `env`, `algorithm` and `seed`. Defaults depend on
// the environment, so `env` is applied before every other key.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "mprlab/envs.h"
#include "mprlab/rl.h"

namespace mprlab {
namespace orchestrator {

enum class Algorithm { kDqn, kPpo };
enum class EncoderMode { kNone, kMprNoRs, kMprRs, kTriplet, kActPred };

std::string AlgorithmName(Algorithm algorithm);
std::string EncoderModeName(EncoderMode mode);
EncoderMode ParseEncoderMode(const std::string& name);

struct EncoderConfig {
  int batch_size = 16;  // pairs, triplets or histories per update
  double learning_rate = 1e-3;
  double grad_clip = 10.0;
  double target_scale = 1.0;
  double triplet_margin = 1.0;
  int history_capacity = 2000;  // on-policy learners only
};

struct DistanceConfig {
  double smoothing = 1.0;
  int projections = 100;
};

struct ExperimentConfig {
  envs::EnvId env = envs::EnvId::kPush;
  Algorithm algorithm = Algorithm::kDqn;
  EncoderMode mode = EncoderMode::kMprNoRs;
  uint64_t seed = 0;

  int iterations = 2000;
  int num_sample = 200;
  int num_collect = 1;
  // Iterations between distance re-sampling under mpr-rs; 0 means T / 10.
  int resample_period = 0;
  int rl_updates_per_iteration = 50;
  int encoder_updates_per_iteration = 1;
  int learning_starts = 1000;  // environment steps before DQN updates
  // Iterations between re-encoding every stored replay transition with the
  // current encoder; 0 keeps the representations from acting time.
  int replay_refresh_period = 0;
  int test_interval_steps = 1000;  // DQN; PPO tests after every collection
  int test_episodes = 10;
  int moving_average_window = 20;
  int workers = 1;
  int export_episodes = 20;  // per policy, for representations.csv
  int mds_last_steps = 10;   // Push-style per-step MDS window; 0 = episode mean
  bool checkpoints = true;

  envs::EnvConfig env_config;
  rl::DqnConfig dqn;
  rl::PpoConfig ppo;
  EncoderConfig encoder;
  DistanceConfig distance;

  // The period actually used by mpr-rs runs.
  int EffectiveResamplePeriod() const;
};

// Defaults for one environment: DQN on Push, PPO on Keep.
ExperimentConfig DefaultConfig(envs::EnvId env);

// Throws with a description of the first inconsistency.
void Validate(const ExperimentConfig& config);

std::vector<std::string> ConfigKeys();

// Parses `key = value` lines (# starts a comment), then applies the
// overrides in order. Unknown keys are rejected with the list of valid keys.
ExperimentConfig ParseConfig(
    std::istream& in,
    const std::vector<std::pair<std::string, std::string>>& overrides = {});
ExperimentConfig ConfigFromPairs(
    const std::vector<std::pair<std::string, std::string>>& pairs);
// Splits "key=value".
std::pair<std::string, std::string> ParseOverride(const std::string& text);

// Every key with its current value; parsing the output reproduces `config`.
void WriteConfig(const ExperimentConfig& config, std::ostream& out);

}  // namespace orchestrator
}  // namespace mprlab

#endif  // MPRLAB_CONFIG_H_
