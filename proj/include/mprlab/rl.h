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

#ifndef MPRLAB_RL_H_
#define MPRLAB_RL_H_

// DQN and PPO learners whose networks take the policy representation as a
// side input concatenated after their first layer, plus the buffers that
// feed them. A learner without an encoder passes zero representations
// through the same networks.

#include <cstdint>
#include <deque>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mprlab/common.h"
#include "mprlab/encoder.h"
#include "mprlab/nn.h"

namespace mprlab {
namespace rl {

// ---------------------------------------------------------------------------
// Replay.

struct ReplayEntry {
  Eigen::VectorXd observation;
  Eigen::VectorXd representation;  // in effect when the action was chosen
  int action = 0;
  double reward = 0.0;
  Eigen::VectorXd next_observation;
  Eigen::VectorXd next_representation;
  bool done = false;
  int64_t episode_id = 0;
  int label = 0;
  int t = 0;  // step index within the episode
};

// Whole episodes, each stored with its observation history. Eviction is FIFO
// by episode once the entry count exceeds the capacity, so every stored
// transition keeps its history.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(int capacity);

  void AddEpisode(std::vector<ReplayEntry> entries, encoder::HistoryPtr history);
  // Uniform over stored entries, with replacement.
  std::vector<const ReplayEntry*> Sample(int batch_size, Rng& rng) const;

  int size() const { return total_; }
  int capacity() const { return capacity_; }
  int num_episodes() const { return static_cast<int>(episodes_.size()); }
  std::span<const encoder::HistoryPtr> histories() const { return histories_; }
  // Transitions of the episode stored at histories()[index].
  std::span<const ReplayEntry> episode_entries(int index) const {
    return episodes_.at(index).entries;
  }
  // Replaces the representations of the episode stored at histories()[index].
  // Column t of `prefixes` is the representation after t observations, so it
  // needs one more column than the episode has transitions.
  void SetEpisodeRepresentations(int index, const Eigen::MatrixXd& prefixes);
  // History of the episode an entry belongs to.
  const encoder::HistoryPtr& HistoryOf(const ReplayEntry& entry) const;

 private:
  struct Episode {
    std::vector<ReplayEntry> entries;
  };

  int capacity_;
  int total_ = 0;
  std::deque<Episode> episodes_;
  std::vector<encoder::HistoryPtr> histories_;  // aligned with episodes_
  std::vector<int> cumulative_;  // entries before each episode
};

// FIFO store of observation histories for on-policy learners.
class HistoryBuffer {
 public:
  explicit HistoryBuffer(int capacity);
  void Add(encoder::HistoryPtr history);
  std::span<const encoder::HistoryPtr> histories() const { return histories_; }
  int size() const { return static_cast<int>(histories_.size()); }

 private:
  int capacity_;
  std::vector<encoder::HistoryPtr> histories_;
};

// ---------------------------------------------------------------------------
// DQN.

struct DqnConfig {
  double gamma = 0.99;
  double learning_rate = 1e-3;
  int batch_size = 64;
  int target_sync_period = 500;
  double huber_delta = 1.0;
  int replay_capacity = 100000;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double epsilon_fraction = 0.2;  // of total steps spent decaying
  double grad_clip = 0.0;         // <= 0 disables clipping
};

// Four 128-unit ReLU layers and a linear head with one output per action.
std::vector<nn::LayerSpec> PushQLayers(int num_actions);
// Side input of representation_dim after the first layer.
nn::Network MakeQNetwork(int observation_dim, std::vector<nn::LayerSpec> layers,
                         int representation_dim, uint64_t seed);

// Linear decay from start to end over fraction * total_steps, then flat.
double LinearEpsilon(int64_t step, int64_t total_steps, double start, double end,
                     double fraction);

// Greedy action with probability 1 - epsilon, uniform otherwise.
int DqnAct(const Eigen::VectorXd& observation,
           const Eigen::VectorXd& representation, const nn::Network& q_net,
           double epsilon, Rng& rng);
int Argmax(const Eigen::VectorXd& values);

double Huber(double x, double delta);

struct DqnBatch {
  Eigen::MatrixXd observations;  // one column per transition
  Eigen::MatrixXd representations;
  std::vector<int> actions;
  Eigen::VectorXd rewards;
  Eigen::MatrixXd next_observations;
  Eigen::MatrixXd next_representations;
  std::vector<bool> dones;

  int size() const { return static_cast<int>(actions.size()); }
};

DqnBatch MakeDqnBatch(std::span<const ReplayEntry* const> entries);

// r + gamma * max_a' Q_target(o', rep', a'), with no bootstrap at done.
Eigen::VectorXd TdTargets(const DqnBatch& batch, const nn::Network& target_net,
                          double gamma);
double DqnLoss(const DqnBatch& batch, const nn::Network& q_net,
               const nn::Network& target_net, double gamma, double delta);

struct DqnGradient {
  double loss = 0.0;
  // d loss / d representations; targets are treated as constants.
  Eigen::MatrixXd representation_grad;
};
// Accumulates the mean Huber TD loss gradient into q_net.
DqnGradient DqnLossAndGradient(const DqnBatch& batch, nn::Network& q_net,
                               const nn::Network& target_net, double gamma,
                               double delta);

class DqnLearner {
 public:
  DqnLearner(nn::Network q_net, DqnConfig config);
  // The optimizer holds pointers into the owned networks.
  DqnLearner(const DqnLearner&) = delete;
  DqnLearner& operator=(const DqnLearner&) = delete;

  // One Adam step on the Q-network. Syncs the target network every
  // target_sync_period updates. Throws on a non-finite loss.
  DqnGradient Update(const DqnBatch& batch);

  const nn::Network& q_net() const { return q_net_; }
  nn::Network& mutable_q_net() { return q_net_; }
  const nn::Network& target_net() const { return target_net_; }
  int64_t updates() const { return updates_; }
  int64_t target_syncs() const { return syncs_; }
  const DqnConfig& config() const { return config_; }

 private:
  DqnConfig config_;
  nn::Network q_net_;
  nn::Network target_net_;
  nn::Adam adam_;
  int64_t updates_ = 0;
  int64_t syncs_ = 0;
};

// ---------------------------------------------------------------------------
// Squashed Gaussian policy for 2-D bounded force actions.
//
// A pre-squash sample u ~ N(mean, diag(exp(log_std))^2) maps to the action
// a = bound * tanh(|u|) * u / |u|, which never leaves the disk of radius
// `bound`.

Eigen::VectorXd SquashAction(const Eigen::VectorXd& u, double bound);
// log |det da/du| of the squash.
double SquashLogDet(const Eigen::VectorXd& u, double bound);
double GaussianLogProb(const Eigen::VectorXd& u, const Eigen::VectorXd& mean,
                       const Eigen::VectorXd& log_std);
// Log density of the squashed action a = SquashAction(u).
double SquashedLogProb(const Eigen::VectorXd& u, const Eigen::VectorXd& mean,
                       const Eigen::VectorXd& log_std, double bound);
double GaussianEntropy(const Eigen::VectorXd& log_std);

// ---------------------------------------------------------------------------
// PPO.

struct PpoConfig {
  double gamma = 0.99;
  double gae_lambda = 0.95;
  double clip = 0.2;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double learning_rate = 3e-4;
  double grad_clip = 10.0;
  int minibatch_size = 1024;
  int minibatches_per_update = 80;
  double action_bound = 2.0;
  double initial_log_std = 0.0;
  bool normalize_advantages = true;
};

// Hidden layers 32, 64, 32 with tanh and a linear head of `outputs` units.
std::vector<nn::LayerSpec> KeepPolicyLayers(int outputs);

struct GaeResult {
  Eigen::VectorXd advantages;
  Eigen::VectorXd returns;
};

// Generalized advantage estimation over one trajectory. `dones[t]` stops
// bootstrapping after step t; `bootstrap_value` is V(s_T) for a trajectory
// cut short without a done.
GaeResult ComputeGae(std::span<const double> rewards,
                     std::span<const double> values,
                     const std::vector<bool>& dones, double bootstrap_value,
                     double gamma, double lambda);

struct PpoSample {
  Eigen::VectorXd observation;
  Eigen::VectorXd representation;
  Eigen::VectorXd pre_squash;  // u
  double log_prob = 0.0;       // Gaussian log-density of u when acting
  double advantage = 0.0;
  double value_target = 0.0;
  int64_t episode_id = 0;
  int t = 0;
};

struct PpoActResult {
  Eigen::VectorXd pre_squash;
  Eigen::VectorXd action;
  double log_prob = 0.0;  // Gaussian log-density of pre_squash
  double value = 0.0;
};

struct PpoLosses {
  double policy = 0.0;
  double value = 0.0;
  double entropy = 0.0;
  double total = 0.0;
  double mean_ratio = 0.0;
};

struct PpoGradient {
  PpoLosses losses;
  // d total / d representation for every sample in the minibatch.
  Eigen::MatrixXd representation_grad;
};

class PpoLearner {
 public:
  PpoLearner(nn::Network policy, nn::Network value, PpoConfig config);
  PpoLearner(const PpoLearner&) = delete;
  PpoLearner& operator=(const PpoLearner&) = delete;

  // Stochastic action unless `deterministic`, which takes the squashed mean.
  PpoActResult Act(const Eigen::VectorXd& observation,
                   const Eigen::VectorXd& representation, Rng& rng,
                   bool deterministic) const;
  double Value(const Eigen::VectorXd& observation,
               const Eigen::VectorXd& representation) const;

  // Loss of one minibatch, optionally with representation overrides.
  PpoLosses Loss(std::span<const PpoSample* const> minibatch,
                 const Eigen::MatrixXd* representations = nullptr) const;
  // Accumulates gradients into the policy, value and log-std parameters.
  PpoGradient LossAndGradient(std::span<const PpoSample* const> minibatch,
                              const Eigen::MatrixXd* representations = nullptr);
  // Clips and applies one Adam step to everything LossAndGradient touched.
  void ApplyGradients();
  void ZeroGrad();

  // minibatches_per_update minibatches drawn without replacement inside
  // each minibatch. Advantages are normalized over all samples first when
  // configured. Returns the mean losses.
  PpoLosses Update(std::vector<PpoSample> samples, Rng& rng);

  const nn::Network& policy() const { return policy_; }
  const nn::Network& value() const { return value_; }
  const nn::Parameter& log_std() const { return log_std_; }
  nn::Parameter& mutable_log_std() { return log_std_; }
  std::vector<nn::Parameter*> Parameters();
  const PpoConfig& config() const { return config_; }

 private:
  PpoConfig config_;
  nn::Network policy_;
  nn::Network value_;
  nn::Parameter log_std_;
  std::unique_ptr<nn::Adam> adam_;
};

}  // namespace rl
}  // namespace mprlab

#endif  // MPRLAB_RL_H_
