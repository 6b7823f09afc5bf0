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

#include "mprlab/rl.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace mprlab {
namespace rl {
namespace {

const double kHalfLogTwoPi = 0.5 * std::log(2.0 * std::numbers::pi);

}  // namespace

ReplayBuffer::ReplayBuffer(int capacity) : capacity_(capacity) {
  Check(capacity > 0, "replay capacity must be positive");
}

void ReplayBuffer::AddEpisode(std::vector<ReplayEntry> entries,
                              encoder::HistoryPtr history) {
  Check(!entries.empty(), "cannot store an empty episode");
  Check(history != nullptr, "every stored episode needs its history");
  total_ += static_cast<int>(entries.size());
  episodes_.push_back({std::move(entries)});
  histories_.push_back(std::move(history));
  while (total_ > capacity_ && episodes_.size() > 1) {
    total_ -= static_cast<int>(episodes_.front().entries.size());
    episodes_.pop_front();
    histories_.erase(histories_.begin());
  }
  cumulative_.resize(episodes_.size());
  int running = 0;
  for (size_t e = 0; e < episodes_.size(); ++e) {
    cumulative_[e] = running;
    running += static_cast<int>(episodes_[e].entries.size());
  }
}

std::vector<const ReplayEntry*> ReplayBuffer::Sample(int batch_size,
                                                     Rng& rng) const {
  Check(total_ > 0, "cannot sample from an empty replay buffer");
  std::vector<const ReplayEntry*> batch(batch_size);
  for (int k = 0; k < batch_size; ++k) {
    const int index = UniformInt(rng, total_);
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), index);
    const size_t e = static_cast<size_t>(it - cumulative_.begin()) - 1;
    batch[k] = &episodes_[e].entries[index - cumulative_[e]];
  }
  return batch;
}

void ReplayBuffer::SetEpisodeRepresentations(int index,
                                             const Eigen::MatrixXd& prefixes) {
  std::vector<ReplayEntry>& entries = episodes_.at(index).entries;
  Check(prefixes.cols() == static_cast<Eigen::Index>(entries.size()) + 1,
        "refresh needs one representation per prefix");
  for (ReplayEntry& entry : entries) {
    entry.representation = prefixes.col(entry.t);
    entry.next_representation = prefixes.col(entry.t + 1);
  }
}

const encoder::HistoryPtr& ReplayBuffer::HistoryOf(const ReplayEntry& entry) const {
  for (size_t e = 0; e < episodes_.size(); ++e) {
    if (episodes_[e].entries.front().episode_id == entry.episode_id) {
      return histories_[e];
    }
  }
  Fail("episode " + std::to_string(entry.episode_id) + " is not in the buffer");
}

HistoryBuffer::HistoryBuffer(int capacity) : capacity_(capacity) {
  Check(capacity > 0, "history capacity must be positive");
}

void HistoryBuffer::Add(encoder::HistoryPtr history) {
  Check(history != nullptr, "null history");
  histories_.push_back(std::move(history));
  if (static_cast<int>(histories_.size()) > capacity_) {
    histories_.erase(histories_.begin());
  }
}

std::vector<nn::LayerSpec> PushQLayers(int num_actions) {
  using nn::Activation;
  using nn::LayerSpec;
  return {LayerSpec::Dense(128, Activation::kRelu),
          LayerSpec::Dense(128, Activation::kRelu),
          LayerSpec::Dense(128, Activation::kRelu),
          LayerSpec::Dense(128, Activation::kRelu),
          LayerSpec::Dense(num_actions, Activation::kIdentity)};
}

nn::Network MakeQNetwork(int observation_dim, std::vector<nn::LayerSpec> layers,
                         int representation_dim, uint64_t seed) {
  Check(layers.size() >= 2, "a Q-network needs at least two layers");
  return nn::Network(observation_dim, std::move(layers), seed,
                     nn::SideInput{representation_dim, 0});
}

double LinearEpsilon(int64_t step, int64_t total_steps, double start, double end,
                     double fraction) {
  const double horizon = fraction * static_cast<double>(total_steps);
  if (horizon <= 0.0 || step >= horizon) return end;
  return start + (end - start) * (static_cast<double>(step) / horizon);
}

int Argmax(const Eigen::VectorXd& values) {
  Eigen::Index best = 0;
  values.maxCoeff(&best);
  return static_cast<int>(best);
}

int DqnAct(const Eigen::VectorXd& observation,
           const Eigen::VectorXd& representation, const nn::Network& q_net,
           double epsilon, Rng& rng) {
  Check(epsilon >= 0.0 && epsilon <= 1.0, "epsilon must lie in [0, 1]");
  if (UniformUnit(rng) < epsilon) {
    return UniformInt(rng, q_net.output_dim());
  }
  const Eigen::MatrixXd rep = representation;
  return Argmax(q_net.Infer(observation, 1, &rep).col(0));
}

double Huber(double x, double delta) {
  const double a = std::abs(x);
  return a <= delta ? 0.5 * x * x : delta * (a - 0.5 * delta);
}

DqnBatch MakeDqnBatch(std::span<const ReplayEntry* const> entries) {
  Check(!entries.empty(), "DQN batch must be non-empty");
  const int n = static_cast<int>(entries.size());
  const int obs_dim = static_cast<int>(entries[0]->observation.size());
  const int rep_dim = static_cast<int>(entries[0]->representation.size());
  DqnBatch batch;
  batch.observations.resize(obs_dim, n);
  batch.next_observations.resize(obs_dim, n);
  batch.representations.resize(rep_dim, n);
  batch.next_representations.resize(rep_dim, n);
  batch.rewards.resize(n);
  batch.actions.resize(n);
  batch.dones.resize(n);
  for (int k = 0; k < n; ++k) {
    const ReplayEntry& e = *entries[k];
    batch.observations.col(k) = e.observation;
    batch.next_observations.col(k) = e.next_observation;
    batch.representations.col(k) = e.representation;
    batch.next_representations.col(k) = e.next_representation;
    batch.rewards(k) = e.reward;
    batch.actions[k] = e.action;
    batch.dones[k] = e.done;
  }
  return batch;
}

Eigen::VectorXd TdTargets(const DqnBatch& batch, const nn::Network& target_net,
                          double gamma) {
  const int n = batch.size();
  const Eigen::MatrixXd next_q =
      target_net.Infer(batch.next_observations, n, &batch.next_representations);
  Eigen::VectorXd targets = batch.rewards;
  for (int k = 0; k < n; ++k) {
    if (!batch.dones[k]) targets(k) += gamma * next_q.col(k).maxCoeff();
  }
  return targets;
}

double DqnLoss(const DqnBatch& batch, const nn::Network& q_net,
               const nn::Network& target_net, double gamma, double delta) {
  const int n = batch.size();
  const Eigen::VectorXd targets = TdTargets(batch, target_net, gamma);
  const Eigen::MatrixXd q = q_net.Infer(batch.observations, n, &batch.representations);
  double loss = 0.0;
  for (int k = 0; k < n; ++k) loss += Huber(q(batch.actions[k], k) - targets(k), delta);
  return loss / n;
}

DqnGradient DqnLossAndGradient(const DqnBatch& batch, nn::Network& q_net,
                               const nn::Network& target_net, double gamma,
                               double delta) {
  const int n = batch.size();
  const Eigen::VectorXd targets = TdTargets(batch, target_net, gamma);
  const Eigen::MatrixXd q = q_net.Forward(batch.observations, n, &batch.representations);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(q.rows(), n);
  DqnGradient result;
  for (int k = 0; k < n; ++k) {
    const int a = batch.actions[k];
    Check(a >= 0 && a < q.rows(), "replayed action out of range");
    const double diff = q(a, k) - targets(k);
    result.loss += Huber(diff, delta);
    grad(a, k) = std::clamp(diff, -delta, delta) / n;
  }
  result.loss /= n;
  result.representation_grad = q_net.Backward(grad).side;
  return result;
}

DqnLearner::DqnLearner(nn::Network q_net, DqnConfig config)
    : config_(config),
      q_net_(std::move(q_net)),
      target_net_(q_net_),
      adam_(q_net_.Parameters(), {.learning_rate = config.learning_rate}) {
  Check(config.target_sync_period > 0, "target sync period must be positive");
}

DqnGradient DqnLearner::Update(const DqnBatch& batch) {
  q_net_.ZeroGrad();
  DqnGradient result = DqnLossAndGradient(batch, q_net_, target_net_,
                                          config_.gamma, config_.huber_delta);
  Check(std::isfinite(result.loss), "DQN loss is not finite; halting");
  if (config_.grad_clip > 0.0) ClipGradNorm(q_net_.Parameters(), config_.grad_clip);
  adam_.Step();
  ++updates_;
  if (updates_ % config_.target_sync_period == 0) {
    target_net_.CopyParametersFrom(q_net_);
    ++syncs_;
  }
  return result;
}

Eigen::VectorXd SquashAction(const Eigen::VectorXd& u, double bound) {
  const double r = u.norm();
  // tanh(r) / r, by its series near zero.
  const double ratio = r < 1e-4 ? 1.0 - r * r / 3.0 : std::tanh(r) / r;
  return bound * ratio * u;
}

double SquashLogDet(const Eigen::VectorXd& u, double bound) {
  const double r = u.norm();
  const int n = static_cast<int>(u.size());
  // The radial map scales the radius by g'(r) and each of the n - 1
  // tangential directions by g(r) / r, with g(r) = bound * tanh(r).
  const double log_sech2 = 2.0 * (std::log(2.0) - r - std::log1p(std::exp(-2.0 * r)));
  const double log_ratio =
      r < 1e-4 ? std::log1p(-r * r / 3.0) : std::log(std::tanh(r) / r);
  return std::log(bound) + log_sech2 + (n - 1) * (std::log(bound) + log_ratio);
}

double GaussianLogProb(const Eigen::VectorXd& u, const Eigen::VectorXd& mean,
                       const Eigen::VectorXd& log_std) {
  Check(u.size() == mean.size() && u.size() == log_std.size(),
        "Gaussian dimension mismatch");
  double total = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    const double z = (u(i) - mean(i)) * std::exp(-log_std(i));
    total += -0.5 * z * z - log_std(i) - kHalfLogTwoPi;
  }
  return total;
}

double SquashedLogProb(const Eigen::VectorXd& u, const Eigen::VectorXd& mean,
                       const Eigen::VectorXd& log_std, double bound) {
  return GaussianLogProb(u, mean, log_std) - SquashLogDet(u, bound);
}

double GaussianEntropy(const Eigen::VectorXd& log_std) {
  return log_std.sum() + log_std.size() * (0.5 + kHalfLogTwoPi);
}

std::vector<nn::LayerSpec> KeepPolicyLayers(int outputs) {
  using nn::Activation;
  using nn::LayerSpec;
  return {LayerSpec::Dense(32, Activation::kTanh),
          LayerSpec::Dense(64, Activation::kTanh),
          LayerSpec::Dense(32, Activation::kTanh),
          LayerSpec::Dense(outputs, Activation::kIdentity)};
}

GaeResult ComputeGae(std::span<const double> rewards,
                     std::span<const double> values,
                     const std::vector<bool>& dones, double bootstrap_value,
                     double gamma, double lambda) {
  const int n = static_cast<int>(rewards.size());
  Check(static_cast<int>(values.size()) == n && static_cast<int>(dones.size()) == n,
        "GAE inputs differ in length");
  GaeResult result;
  result.advantages.resize(n);
  result.returns.resize(n);
  double next_value = bootstrap_value;
  double running = 0.0;
  for (int t = n - 1; t >= 0; --t) {
    const double keep = dones[t] ? 0.0 : 1.0;
    const double delta = rewards[t] + gamma * next_value * keep - values[t];
    running = delta + gamma * lambda * keep * running;
    result.advantages(t) = running;
    result.returns(t) = running + values[t];
    next_value = values[t];
  }
  return result;
}

PpoLearner::PpoLearner(nn::Network policy, nn::Network value, PpoConfig config)
    : config_(config), policy_(std::move(policy)), value_(std::move(value)) {
  Check(value_.output_dim() == 1, "value network must have one output");
  Check(policy_.input_dim() == value_.input_dim() &&
            policy_.side_dim() == value_.side_dim(),
        "policy and value networks must share their inputs");
  const int dim = policy_.output_dim();
  log_std_.name = "log_std";
  log_std_.value = Eigen::MatrixXd::Constant(dim, 1, config.initial_log_std);
  log_std_.grad = Eigen::MatrixXd::Zero(dim, 1);
  adam_ = std::make_unique<nn::Adam>(Parameters(),
                                     nn::AdamConfig{.learning_rate = config.learning_rate});
}

std::vector<nn::Parameter*> PpoLearner::Parameters() {
  std::vector<nn::Parameter*> params = policy_.Parameters();
  for (nn::Parameter* p : value_.Parameters()) params.push_back(p);
  params.push_back(&log_std_);
  return params;
}

PpoActResult PpoLearner::Act(const Eigen::VectorXd& observation,
                             const Eigen::VectorXd& representation, Rng& rng,
                             bool deterministic) const {
  const Eigen::MatrixXd rep = representation;
  const Eigen::VectorXd mean = policy_.Infer(observation, 1, &rep).col(0);
  const Eigen::VectorXd log_std = log_std_.value.col(0);
  PpoActResult result;
  result.pre_squash = mean;
  if (!deterministic) {
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
      result.pre_squash(i) += std::exp(log_std(i)) * StandardNormal(rng);
    }
  }
  result.action = SquashAction(result.pre_squash, config_.action_bound);
  result.log_prob = GaussianLogProb(result.pre_squash, mean, log_std);
  result.value = value_.Infer(observation, 1, &rep)(0, 0);
  return result;
}

double PpoLearner::Value(const Eigen::VectorXd& observation,
                         const Eigen::VectorXd& representation) const {
  const Eigen::MatrixXd rep = representation;
  return value_.Infer(observation, 1, &rep)(0, 0);
}

namespace {

struct PackedMinibatch {
  Eigen::MatrixXd observations;
  Eigen::MatrixXd representations;
  Eigen::MatrixXd pre_squash;
  Eigen::VectorXd old_log_probs;
  Eigen::VectorXd advantages;
  Eigen::VectorXd value_targets;
};

PackedMinibatch Pack(std::span<const PpoSample* const> minibatch,
                     const Eigen::MatrixXd* representations) {
  Check(!minibatch.empty(), "PPO minibatch must be non-empty");
  const int n = static_cast<int>(minibatch.size());
  PackedMinibatch packed;
  packed.observations.resize(minibatch[0]->observation.size(), n);
  packed.representations.resize(minibatch[0]->representation.size(), n);
  packed.pre_squash.resize(minibatch[0]->pre_squash.size(), n);
  packed.old_log_probs.resize(n);
  packed.advantages.resize(n);
  packed.value_targets.resize(n);
  for (int k = 0; k < n; ++k) {
    const PpoSample& s = *minibatch[k];
    packed.observations.col(k) = s.observation;
    packed.representations.col(k) = s.representation;
    packed.pre_squash.col(k) = s.pre_squash;
    packed.old_log_probs(k) = s.log_prob;
    packed.advantages(k) = s.advantage;
    packed.value_targets(k) = s.value_target;
  }
  if (representations) {
    Check(representations->rows() == packed.representations.rows() &&
              representations->cols() == n,
          "representation override has the wrong shape");
    packed.representations = *representations;
  }
  return packed;
}

// Shared forward arithmetic of the PPO objective. Fills the gradient with
// respect to the policy means, log-std and values when requested.
PpoLosses Objective(const PackedMinibatch& batch, const Eigen::MatrixXd& means,
                    const Eigen::VectorXd& log_std, const Eigen::MatrixXd& values,
                    const PpoConfig& config, Eigen::MatrixXd* grad_means,
                    Eigen::VectorXd* grad_log_std, Eigen::MatrixXd* grad_values) {
  const int n = static_cast<int>(means.cols());
  const int dim = static_cast<int>(means.rows());
  const Eigen::ArrayXd inv_std = (-log_std.array()).exp();
  if (grad_means) *grad_means = Eigen::MatrixXd::Zero(dim, n);
  if (grad_log_std) *grad_log_std = Eigen::VectorXd::Zero(dim);
  if (grad_values) *grad_values = Eigen::MatrixXd::Zero(1, n);
  PpoLosses losses;
  for (int k = 0; k < n; ++k) {
    const Eigen::ArrayXd z =
        (batch.pre_squash.col(k) - means.col(k)).array() * inv_std;
    const double log_prob =
        (-0.5 * z.square() - log_std.array() - kHalfLogTwoPi).sum();
    const double ratio = std::exp(log_prob - batch.old_log_probs(k));
    Check(std::isfinite(ratio), "PPO probability ratio is not finite; halting");
    const double adv = batch.advantages(k);
    const double clipped = std::clamp(ratio, 1.0 - config.clip, 1.0 + config.clip);
    losses.policy -= std::min(ratio * adv, clipped * adv) / n;
    losses.mean_ratio += ratio / n;
    // The unclipped branch is active unless clipping lowers the objective.
    const bool active = !((adv >= 0.0 && ratio > 1.0 + config.clip) ||
                          (adv < 0.0 && ratio < 1.0 - config.clip));
    if (active && grad_means) {
      const double g_log_prob = -ratio * adv / n;
      grad_means->col(k) = g_log_prob * (z * inv_std).matrix();
      *grad_log_std += g_log_prob * (z.square() - 1.0).matrix();
    }
    const double err = values(0, k) - batch.value_targets(k);
    losses.value += err * err / n;
    if (grad_values) (*grad_values)(0, k) = config.value_coef * 2.0 * err / n;
  }
  losses.entropy = GaussianEntropy(log_std);
  if (grad_log_std) grad_log_std->array() -= config.entropy_coef;
  losses.total = losses.policy + config.value_coef * losses.value -
                 config.entropy_coef * losses.entropy;
  return losses;
}

}  // namespace

PpoLosses PpoLearner::Loss(std::span<const PpoSample* const> minibatch,
                           const Eigen::MatrixXd* representations) const {
  const PackedMinibatch batch = Pack(minibatch, representations);
  const int n = static_cast<int>(minibatch.size());
  const Eigen::MatrixXd means =
      policy_.Infer(batch.observations, n, &batch.representations);
  const Eigen::MatrixXd values =
      value_.Infer(batch.observations, n, &batch.representations);
  return Objective(batch, means, log_std_.value.col(0), values, config_, nullptr,
                   nullptr, nullptr);
}

PpoGradient PpoLearner::LossAndGradient(std::span<const PpoSample* const> minibatch,
                                        const Eigen::MatrixXd* representations) {
  const PackedMinibatch batch = Pack(minibatch, representations);
  const int n = static_cast<int>(minibatch.size());
  const Eigen::MatrixXd means =
      policy_.Forward(batch.observations, n, &batch.representations);
  const Eigen::MatrixXd values =
      value_.Forward(batch.observations, n, &batch.representations);
  Eigen::MatrixXd grad_means, grad_values;
  Eigen::VectorXd grad_log_std;
  PpoGradient result;
  result.losses = Objective(batch, means, log_std_.value.col(0), values, config_,
                            &grad_means, &grad_log_std, &grad_values);
  log_std_.grad.col(0) += grad_log_std;
  result.representation_grad =
      policy_.Backward(grad_means).side + value_.Backward(grad_values).side;
  return result;
}

void PpoLearner::ZeroGrad() {
  policy_.ZeroGrad();
  value_.ZeroGrad();
  log_std_.grad.setZero();
}

void PpoLearner::ApplyGradients() {
  const auto params = Parameters();
  if (config_.grad_clip > 0.0) ClipGradNorm(params, config_.grad_clip);
  adam_->Step();
}

PpoLosses PpoLearner::Update(std::vector<PpoSample> samples, Rng& rng) {
  Check(!samples.empty(), "PPO update needs samples");
  const int n = static_cast<int>(samples.size());
  if (config_.normalize_advantages && n > 1) {
    double mean = 0.0;
    for (const auto& s : samples) mean += s.advantage / n;
    double var = 0.0;
    for (const auto& s : samples) var += (s.advantage - mean) * (s.advantage - mean) / n;
    const double scale = 1.0 / (std::sqrt(var) + 1e-8);
    for (auto& s : samples) s.advantage = (s.advantage - mean) * scale;
  }
  const int size = std::min(config_.minibatch_size, n);
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<const PpoSample*> minibatch(size);
  PpoLosses mean_losses;
  for (int m = 0; m < config_.minibatches_per_update; ++m) {
    // Partial Fisher-Yates: the first `size` slots become the minibatch.
    for (int k = 0; k < size; ++k) {
      std::swap(order[k], order[k + UniformInt(rng, n - k)]);
      minibatch[k] = &samples[order[k]];
    }
    ZeroGrad();
    const PpoLosses losses = LossAndGradient(minibatch).losses;
    ApplyGradients();
    const double w = 1.0 / config_.minibatches_per_update;
    mean_losses.policy += w * losses.policy;
    mean_losses.value += w * losses.value;
    mean_losses.entropy += w * losses.entropy;
    mean_losses.total += w * losses.total;
    mean_losses.mean_ratio += w * losses.mean_ratio;
  }
  return mean_losses;
}

}  // namespace rl
}  // namespace mprlab
