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

#include "mprlab/orchestrator.h"

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "mprlab/plot.h"

namespace mprlab {
namespace orchestrator {
namespace {

namespace fs = std::filesystem;

int ObservationDim(envs::EnvId env) {
  return env == envs::EnvId::kPush ? envs::kPushObservationDim
                                   : envs::kKeepObservationDim;
}

int Horizon(const ExperimentConfig& config) {
  return config.env == envs::EnvId::kPush ? config.env_config.push.horizon
                                          : config.env_config.keep.horizon;
}

// Opponent actions as a real column: an index for discrete actions, the
// concatenated vectors otherwise.
Eigen::VectorXd OpponentActionColumn(
    const std::vector<distmath::ActionValue>& actions) {
  std::vector<double> values;
  for (const auto& action : actions) {
    if (const int* index = std::get_if<int>(&action)) {
      values.push_back(*index);
    } else {
      const auto& v = std::get<std::vector<double>>(action);
      values.insert(values.end(), v.begin(), v.end());
    }
  }
  return Eigen::Map<const Eigen::VectorXd>(values.data(),
                                           static_cast<Eigen::Index>(values.size()));
}

std::vector<std::string> PolicyLabels(
    const std::vector<envs::OpponentPolicy>& policies) {
  std::vector<std::string> labels;
  for (const auto& policy : policies) labels.push_back(envs::PolicyName(policy));
  return labels;
}

void WriteTextFile(const fs::path& path,
                   const std::function<void(std::ostream&)>& write) {
  std::ofstream out(path);
  Check(out.good(), "cannot open " + path.string() + " for writing");
  write(out);
  out.flush();
  Check(out.good(), "failed writing " + path.string());
}

double Mean(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

// One collected training episode and what the learners need from it.
struct CollectedEpisode {
  encoder::HistoryPtr history;
  std::vector<rl::ReplayEntry> dqn_entries;
  std::vector<rl::PpoSample> ppo_samples;
  std::vector<double> rewards;
  std::vector<double> values;
  double episode_return = 0.0;
};

class Trainer {
 public:
  Trainer(const ExperimentConfig& config, const MetricsCallback& on_metrics)
      : config_(config),
        on_metrics_(on_metrics),
        policies_(envs::TrainingPolicies(config.env)),
        rng_(StreamSeed(config.seed, SeedStream::kTraining)),
        episode_seed_(StreamSeed(config.seed, SeedStream::kTrainingEpisodes)),
        replay_(config.dqn.replay_capacity),
        on_policy_histories_(config.encoder.history_capacity) {
    Validate(config_);
    result_.agent = std::make_unique<Agent>(config_);
    agent_ = result_.agent.get();
    if (agent_->has_encoder()) {
      std::vector<nn::Parameter*> params = agent_->mutable_encoder().Parameters();
      if (agent_->has_prediction_head()) {
        for (nn::Parameter* p : agent_->mutable_prediction_head().Parameters()) {
          params.push_back(p);
        }
      }
      encoder_params_ = params;
      encoder_adam_ = std::make_unique<nn::Adam>(
          params, nn::AdamConfig{.learning_rate = config_.encoder.learning_rate});
    }
  }

  TrainResult Run() {
    InitialSampling();
    if (config_.algorithm == Algorithm::kDqn) {
      RunDqn();
    } else {
      RunPpo();
    }
    result_.distances = distances_;
    return std::move(result_);
  }

 private:
  bool UsesDistances() const {
    return config_.mode == EncoderMode::kMprNoRs ||
           config_.mode == EncoderMode::kMprRs;
  }

  // Random-ego distributions are always sampled: they feed the heatmap and
  // distance artifacts even when the encoder mode does not train on them.
  void InitialSampling() {
    DistributionStore store = SampleDistributions(
        config_.env, config_.env_config, policies_, config_.num_sample,
        UniformRandomEgo(config_.env, config_.env_config),
        DeriveSeed(StreamSeed(config_.seed, SeedStream::kDistributionSampling), 0),
        config_.distance.smoothing, config_.workers);
    distmath::PolicyDistanceMatrix distances = ComputeDistances(
        store, config_.distance,
        StreamSeed(config_.seed, SeedStream::kProjections), config_.workers);
    result_.initial_store = std::move(store);
    result_.initial_distances = distances;
    if (UsesDistances()) distances_ = distances;
  }

  // Re-samples with the current ego policy, exploration pinned at its
  // current level.
  void Resample(double epsilon) {
    ++result_.distance_rebuilds;
    ActOptions options{.epsilon = epsilon, .deterministic = false};
    DistributionStore store = SampleDistributions(
        config_.env, config_.env_config, policies_, config_.num_sample,
        AgentEgo(*agent_, options),
        DeriveSeed(StreamSeed(config_.seed, SeedStream::kDistributionSampling),
                   static_cast<uint64_t>(result_.distance_rebuilds)),
        config_.distance.smoothing, config_.workers);
    distances_ = ComputeDistances(
        store, config_.distance,
        StreamSeed(config_.seed, SeedStream::kProjections), config_.workers);
  }

  bool ResampleDue(int iteration) const {
    return config_.mode == EncoderMode::kMprRs &&
           iteration % config_.EffectiveResamplePeriod() == 0;
  }

  uint64_t NextEpisodeSeed() {
    return DeriveSeed(episode_seed_, episode_counter_++);
  }

  // Rolls out one training episode with the exploring policy.
  CollectedEpisode CollectEpisode(int label, double epsilon_base,
                                  int64_t step_base, int64_t total_steps) {
    const int64_t episode_id = episode_counter_;
    const uint64_t seed = NextEpisodeSeed();
    auto env = envs::MakeEnvironment(config_.env, config_.env_config);
    Eigen::VectorXd observation = env->Reset(DeriveSeed(seed, 0), policies_[label]);
    AgentActor actor(*agent_,
                     ActOptions{.epsilon = epsilon_base, .deterministic = false},
                     DeriveSeed(seed, 1));
    const int horizon = env->horizon();
    auto history = std::make_shared<encoder::ObservationHistory>();
    history->observations.resize(env->observation_dim(), horizon);
    history->episode_id = episode_id;
    history->label = label;
    CollectedEpisode episode;
    int t = 0;
    while (!env->done()) {
      Eigen::VectorXd representation = actor.representation();
      if (config_.algorithm == Algorithm::kDqn) {
        actor.set_epsilon(rl::LinearEpsilon(
            step_base + t, total_steps, config_.dqn.epsilon_start,
            config_.dqn.epsilon_end, config_.dqn.epsilon_fraction));
      }
      distmath::ActionValue action = actor.Act(observation);
      envs::StepRecord record = env->Step(action);
      Eigen::VectorXd next_observation = env->Observation();
      Eigen::VectorXd opp = OpponentActionColumn(record.opp_action);
      if (t == 0) history->opponent_actions.resize(opp.size(), horizon);
      history->observations.col(t) = observation;
      history->opponent_actions.col(t) = opp;
      episode.episode_return += record.reward;
      if (config_.algorithm == Algorithm::kDqn) {
        rl::ReplayEntry entry;
        entry.observation = observation;
        entry.representation = representation;
        entry.action = std::get<int>(action);
        entry.reward = record.reward;
        entry.next_observation = next_observation;
        entry.next_representation = actor.representation();
        entry.done = record.done;
        entry.episode_id = episode_id;
        entry.label = label;
        entry.t = t;
        episode.dqn_entries.push_back(std::move(entry));
      } else {
        const rl::PpoActResult& act = actor.last_ppo();
        rl::PpoSample sample;
        sample.observation = observation;
        sample.representation = representation;
        sample.pre_squash = act.pre_squash;
        sample.log_prob = act.log_prob;
        sample.episode_id = episode_id;
        sample.t = t;
        episode.ppo_samples.push_back(std::move(sample));
        episode.rewards.push_back(record.reward);
        episode.values.push_back(act.value);
      }
      observation = next_observation;
      ++t;
    }
    Check(t == horizon, "episode ended before the horizon");
    episode.history = std::move(history);
    return episode;
  }

  // --------------------------------------------------------------------
  // Encoder updates.

  // Gradient of the RL loss with respect to representations re-encoded
  // from `batch`, backpropagated into the encoder only. The step-0
  // representation comes from the zero state and receives no gradient.
  double RlRepresentationTerm(
      const std::vector<const encoder::ObservationHistory*>& batch,
      const std::vector<std::span<const rl::ReplayEntry>>& dqn_entries,
      const std::vector<const std::vector<rl::PpoSample>*>& ppo_samples) {
    nn::Network& enc = agent_->mutable_encoder();
    const int b = static_cast<int>(batch.size());
    const int steps = batch[0]->length();
    Eigen::MatrixXd outputs =
        enc.Forward(encoder::PackHistories(batch), b);
    const Eigen::VectorXd rep0 = enc.OutputFromState(enc.ZeroState(1)).col(0);
    auto rep_at = [&](int t, int i) -> Eigen::VectorXd {
      return t == 0 ? rep0 : Eigen::VectorXd(outputs.col((t - 1) * b + i));
    };
    Eigen::MatrixXd representation_grad;
    double loss = 0.0;
    if (config_.algorithm == Algorithm::kDqn) {
      std::vector<rl::ReplayEntry> entries;
      entries.reserve(static_cast<size_t>(steps) * b);
      for (int t = 0; t < steps; ++t) {
        for (int i = 0; i < b; ++i) {
          rl::ReplayEntry e = dqn_entries[i][t];
          e.representation = rep_at(t, i);
          e.next_representation = outputs.col(t * b + i);
          entries.push_back(std::move(e));
        }
      }
      std::vector<const rl::ReplayEntry*> pointers;
      for (const auto& e : entries) pointers.push_back(&e);
      rl::DqnBatch dqn_batch = rl::MakeDqnBatch(pointers);
      rl::DqnLearner& learner = agent_->dqn();
      rl::DqnGradient g = rl::DqnLossAndGradient(
          dqn_batch, learner.mutable_q_net(), learner.target_net(),
          config_.dqn.gamma, config_.dqn.huber_delta);
      learner.mutable_q_net().ZeroGrad();
      loss = g.loss;
      representation_grad = std::move(g.representation_grad);
    } else {
      std::vector<const rl::PpoSample*> pointers;
      Eigen::MatrixXd reps(encoder::kRepresentationDim,
                           static_cast<Eigen::Index>(steps) * b);
      for (int t = 0; t < steps; ++t) {
        for (int i = 0; i < b; ++i) {
          pointers.push_back(&(*ppo_samples[i])[t]);
          reps.col(t * b + i) = rep_at(t, i);
        }
      }
      rl::PpoLearner& learner = agent_->ppo();
      rl::PpoGradient g = learner.LossAndGradient(pointers, &reps);
      learner.ZeroGrad();
      loss = g.losses.total;
      representation_grad = std::move(g.representation_grad);
    }
    Eigen::MatrixXd output_grad = Eigen::MatrixXd::Zero(outputs.rows(), outputs.cols());
    for (int t = 1; t < steps; ++t) {
      output_grad.middleCols((t - 1) * b, b) = representation_grad.middleCols(t * b, b);
    }
    enc.Backward(output_grad);
    return loss;
  }

  // One encoder step on histories drawn from `histories`. Returns NaN when
  // the buffer cannot yet form a batch.
  double EncoderUpdate(std::span<const encoder::HistoryPtr> histories,
                       const std::vector<const CollectedEpisode*>& recent) {
    nn::Network& enc = agent_->mutable_encoder();
    const int batch_size = config_.encoder.batch_size;
    double loss = 0.0;
    for (nn::Parameter* p : encoder_params_) p->grad.setZero();
    switch (config_.mode) {
      case EncoderMode::kMprNoRs:
      case EncoderMode::kMprRs: {
        if (histories.size() < 2) return std::nan("");
        encoder::EmbedBatch batch = encoder::SampleEmbedBatch(
            histories, *distances_, batch_size, rng_,
            config_.encoder.target_scale);
        loss = encoder::EmbedLossAndGradient(batch, enc);
        break;
      }
      case EncoderMode::kTriplet: {
        bool two_labels = false;
        for (const auto& h : histories) {
          if (h->label != histories[0]->label) {
            two_labels = true;
            break;
          }
        }
        if (!two_labels) return std::nan("");
        encoder::TripletBatch batch =
            encoder::SampleTripletBatch(histories, batch_size, rng_);
        loss = encoder::TripletBatchLossAndGradient(batch, enc,
                                                    config_.encoder.triplet_margin);
        break;
      }
      case EncoderMode::kActPred: {
        std::vector<const encoder::ObservationHistory*> batch;
        std::vector<std::span<const rl::ReplayEntry>> dqn_entries;
        std::vector<const std::vector<rl::PpoSample>*> ppo_samples;
        for (int i = 0; i < batch_size; ++i) {
          if (config_.algorithm == Algorithm::kDqn) {
            int index = UniformInt(rng_, replay_.num_episodes());
            batch.push_back(replay_.histories()[index].get());
            dqn_entries.push_back(replay_.episode_entries(index));
          } else {
            const CollectedEpisode* e =
                recent[UniformInt(rng_, static_cast<int>(recent.size()))];
            batch.push_back(e->history.get());
            ppo_samples.push_back(&e->ppo_samples);
          }
        }
        loss = encoder::ActionPredictionLossAndGradient(
            batch, agent_->predictor(), enc, agent_->mutable_prediction_head());
        loss += RlRepresentationTerm(batch, dqn_entries, ppo_samples);
        break;
      }
      case EncoderMode::kNone:
        return std::nan("");
    }
    Check(std::isfinite(loss), "non-finite encoder loss; halting");
    if (config_.encoder.grad_clip > 0.0) {
      nn::ClipGradNorm(encoder_params_, config_.encoder.grad_clip);
    }
    encoder_adam_->Step();
    return loss;
  }

  // --------------------------------------------------------------------
  // Evaluation and metrics.

  void Test(int iteration, double epsilon) {
    EvalResult eval = Evaluate(
        *agent_, config_.test_episodes,
        DeriveSeed(StreamSeed(config_.seed, SeedStream::kEvaluation),
                   static_cast<uint64_t>(test_rewards_.size())),
        config_.workers);
    test_rewards_.push_back(eval.mean_reward);
    MetricsRow row;
    row.step = steps_;
    row.iteration = iteration;
    row.train_reward = Mean(pending_train_);
    row.test_reward = eval.mean_reward;
    row.test_reward_ma = TrailingMean(test_rewards_, config_.moving_average_window);
    row.rl_loss = Mean(pending_rl_);
    row.encoder_loss = Mean(pending_encoder_);
    row.epsilon = epsilon;
    pending_train_.clear();
    pending_rl_.clear();
    pending_encoder_.clear();
    result_.metrics.push_back(row);
    if (on_metrics_) on_metrics_(row);
  }

  void RecordEncoderLoss(double loss) {
    if (!std::isnan(loss)) pending_encoder_.push_back(loss);
  }

  // --------------------------------------------------------------------
  // DQN on Push.

  void RunDqn() {
    const int horizon = Horizon(config_);
    const int64_t total_steps =
        static_cast<int64_t>(config_.iterations) * config_.num_collect * horizon;
    const rl::DqnConfig& dqn = config_.dqn;
    int64_t next_test = config_.test_interval_steps;
    double epsilon = dqn.epsilon_start;
    for (int iteration = 1; iteration <= config_.iterations; ++iteration) {
      for (int c = 0; c < config_.num_collect; ++c) {
        int label = UniformInt(rng_, static_cast<int>(policies_.size()));
        CollectedEpisode episode =
            CollectEpisode(label, epsilon, steps_, total_steps);
        steps_ += horizon;
        pending_train_.push_back(episode.episode_return);
        replay_.AddEpisode(std::move(episode.dqn_entries), episode.history);
      }
      epsilon = rl::LinearEpsilon(steps_, total_steps, dqn.epsilon_start,
                                  dqn.epsilon_end, dqn.epsilon_fraction);
      if (steps_ >= config_.learning_starts) {
        for (int u = 0; u < config_.rl_updates_per_iteration; ++u) {
          auto entries = replay_.Sample(dqn.batch_size, rng_);
          rl::DqnGradient g = agent_->dqn().Update(rl::MakeDqnBatch(entries));
          pending_rl_.push_back(g.loss);
        }
        if (agent_->has_encoder()) {
          for (int u = 0; u < config_.encoder_updates_per_iteration; ++u) {
            RecordEncoderLoss(EncoderUpdate(replay_.histories(), {}));
          }
        }
      }
      if (agent_->has_encoder() && config_.replay_refresh_period > 0 &&
          iteration % config_.replay_refresh_period == 0) {
        RefreshReplay();
      }
      while (steps_ >= next_test) {
        Test(iteration, epsilon);
        next_test += config_.test_interval_steps;
      }
      if (ResampleDue(iteration)) Resample(epsilon);
    }
    result_.environment_steps = steps_;
  }

  // Re-encodes every stored transition with the current encoder so the
  // Q-network trains on representations the encoder would produce now.
  void RefreshReplay() {
    const nn::Network& enc = agent_->encoder();
    const Eigen::VectorXd rep0 = enc.OutputFromState(enc.ZeroState(1)).col(0);
    const auto histories = replay_.histories();
    constexpr int kChunk = 128;
    for (int start = 0; start < replay_.num_episodes(); start += kChunk) {
      const int b = std::min(kChunk, replay_.num_episodes() - start);
      std::vector<const encoder::ObservationHistory*> batch;
      for (int i = 0; i < b; ++i) batch.push_back(histories[start + i].get());
      const int steps = batch[0]->length();
      const Eigen::MatrixXd outputs = enc.Infer(encoder::PackHistories(batch), b);
      Eigen::MatrixXd prefixes(rep0.size(), steps + 1);
      for (int i = 0; i < b; ++i) {
        prefixes.col(0) = rep0;
        for (int t = 1; t <= steps; ++t) prefixes.col(t) = outputs.col((t - 1) * b + i);
        replay_.SetEpisodeRepresentations(start + i, prefixes);
      }
    }
  }

  // --------------------------------------------------------------------
  // PPO on Keep.

  void RunPpo() {
    const int horizon = Horizon(config_);
    const rl::PpoConfig& ppo = config_.ppo;
    for (int iteration = 1; iteration <= config_.iterations; ++iteration) {
      // A fresh training opponent for every episode of the collection.
      std::vector<CollectedEpisode> episodes;
      std::vector<rl::PpoSample> samples;
      for (int c = 0; c < config_.num_collect; ++c) {
        int label = UniformInt(rng_, static_cast<int>(policies_.size()));
        CollectedEpisode episode = CollectEpisode(label, 0.0, steps_, 0);
        steps_ += horizon;
        pending_train_.push_back(episode.episode_return);
        // The horizon is the end of the task, so nothing is bootstrapped.
        std::vector<bool> dones(episode.rewards.size(), false);
        dones.back() = true;
        rl::GaeResult gae = rl::ComputeGae(episode.rewards, episode.values, dones,
                                           0.0, ppo.gamma, ppo.gae_lambda);
        for (size_t t = 0; t < episode.ppo_samples.size(); ++t) {
          episode.ppo_samples[t].advantage = gae.advantages[t];
          episode.ppo_samples[t].value_target = gae.returns[t];
          samples.push_back(episode.ppo_samples[t]);
        }
        on_policy_histories_.Add(episode.history);
        episodes.push_back(std::move(episode));
      }
      rl::PpoLosses losses = agent_->ppo().Update(std::move(samples), rng_);
      pending_rl_.push_back(losses.total);
      if (agent_->has_encoder()) {
        std::vector<const CollectedEpisode*> recent;
        for (const auto& e : episodes) recent.push_back(&e);
        for (int u = 0; u < config_.encoder_updates_per_iteration; ++u) {
          RecordEncoderLoss(EncoderUpdate(on_policy_histories_.histories(), recent));
        }
      }
      Test(iteration, 0.0);
      if (ResampleDue(iteration)) Resample(0.0);
    }
    result_.environment_steps = steps_;
  }

  ExperimentConfig config_;
  MetricsCallback on_metrics_;
  std::vector<envs::OpponentPolicy> policies_;
  Rng rng_;
  uint64_t episode_seed_;
  uint64_t episode_counter_ = 0;
  int64_t steps_ = 0;
  rl::ReplayBuffer replay_;
  rl::HistoryBuffer on_policy_histories_;
  TrainResult result_;
  Agent* agent_ = nullptr;
  std::vector<nn::Parameter*> encoder_params_;
  std::unique_ptr<nn::Adam> encoder_adam_;
  std::optional<distmath::PolicyDistanceMatrix> distances_;
  std::vector<double> test_rewards_;
  std::vector<double> pending_train_;
  std::vector<double> pending_rl_;
  std::vector<double> pending_encoder_;
};

void SaveNetwork(const nn::Network& network, int64_t step, const fs::path& path) {
  WriteTextFile(path, [&](std::ostream& out) {
    nn::SaveCheckpoint(nn::MakeCheckpoint(network, step), out);
  });
}

void LoadNetwork(nn::Network& network, const fs::path& path) {
  std::ifstream in(path);
  Check(in.good(), "cannot open checkpoint " + path.string());
  nn::RestoreCheckpoint(nn::LoadCheckpoint(in), network);
}

}  // namespace

uint64_t StreamSeed(uint64_t master, SeedStream stream) {
  return DeriveSeed(master, static_cast<uint64_t>(stream));
}

// ---------------------------------------------------------------------------
// Joint-action distributions.

EgoActorFactory UniformRandomEgo(envs::EnvId env, const envs::EnvConfig& config) {
  if (env == envs::EnvId::kPush) {
    return [](uint64_t seed) -> EgoActor {
      auto rng = std::make_shared<Rng>(seed);
      return [rng](const Eigen::VectorXd&) -> distmath::ActionValue {
        return UniformInt(*rng, envs::kPushNumActions);
      };
    };
  }
  const double bound = config.keep.max_ego_force;
  return [bound](uint64_t seed) -> EgoActor {
    auto rng = std::make_shared<Rng>(seed);
    return [rng, bound](const Eigen::VectorXd&) -> distmath::ActionValue {
      // Uniform over the disk: radius from the square root of a uniform.
      double radius = bound * std::sqrt(UniformUnit(*rng));
      double angle = 2.0 * std::numbers::pi * UniformUnit(*rng);
      return std::vector<double>{radius * std::cos(angle),
                                 radius * std::sin(angle)};
    };
  };
}

DistributionStore SampleDistributions(
    envs::EnvId env, const envs::EnvConfig& env_config,
    const std::vector<envs::OpponentPolicy>& policies, int num_sample,
    const EgoActorFactory& ego, uint64_t seed, double smoothing, int workers) {
  Check(!policies.empty(), "distribution sampling needs at least one policy");
  Check(num_sample > 0, "num_sample must be positive");
  const int n = static_cast<int>(policies.size());
  std::vector<std::vector<distmath::JointActionSample>> per_episode(
      static_cast<size_t>(n) * num_sample);
  distmath::JointActionSpace space =
      envs::MakeEnvironment(env, env_config)->joint_action_space();
  ParallelFor(n * num_sample, workers, [&](int index) {
    const int label = index / num_sample;
    const uint64_t episode_seed = DeriveSeed(seed, static_cast<uint64_t>(index));
    auto environment = envs::MakeEnvironment(env, env_config);
    Eigen::VectorXd observation =
        environment->Reset(DeriveSeed(episode_seed, 0), policies[label]);
    EgoActor actor = ego(DeriveSeed(episode_seed, 1));
    auto& samples = per_episode[index];
    while (!environment->done()) {
      envs::StepRecord record = environment->Step(actor(observation));
      samples.push_back({record.ego_action, record.opp_action, label});
      observation = environment->Observation();
    }
  });
  DistributionStore store;
  store.labels = PolicyLabels(policies);
  store.space = space;
  for (int label = 0; label < n; ++label) {
    std::vector<distmath::JointActionSample> samples;
    for (int e = 0; e < num_sample; ++e) {
      auto& episode = per_episode[static_cast<size_t>(label) * num_sample + e];
      samples.insert(samples.end(), episode.begin(), episode.end());
    }
    if (space.is_discrete()) {
      store.distributions.push_back(
          distmath::BuildFrequencyTable(samples, space, smoothing));
    } else {
      store.distributions.push_back(distmath::BuildSampleSet(samples, space));
    }
  }
  return store;
}

distmath::PolicyDistanceMatrix ComputeDistances(const DistributionStore& store,
                                                const DistanceConfig& config,
                                                uint64_t projection_seed,
                                                int workers) {
  if (store.space.is_discrete()) {
    return distmath::BuildDistanceMatrix(store.distributions, store.labels,
                                         distmath::DistanceMode::kKl, nullptr,
                                         workers);
  }
  distmath::ProjectionSet projections = distmath::MakeProjections(
      store.space.embedded_dim(), config.projections, projection_seed);
  return distmath::BuildDistanceMatrix(store.distributions, store.labels,
                                       distmath::DistanceMode::kSlicedWasserstein,
                                       &projections, workers);
}

// ---------------------------------------------------------------------------
// Agent.

Agent::Agent(const ExperimentConfig& config) : config_(config) {
  const int obs_dim = ObservationDim(config.env);
  const uint64_t encoder_seed = StreamSeed(config.seed, SeedStream::kEncoderInit);
  const uint64_t learner_seed = StreamSeed(config.seed, SeedStream::kLearnerInit);
  if (config.mode != EncoderMode::kNone) {
    encoder_ = encoder::MakeEncoder(obs_dim,
                                    config.env == envs::EnvId::kPush
                                        ? encoder::PushEncoderLayers()
                                        : encoder::KeepEncoderLayers(),
                                    DeriveSeed(encoder_seed, 0));
  }
  if (config.mode == EncoderMode::kActPred) {
    head_ = encoder::MakePredictionHead(predictor(), DeriveSeed(encoder_seed, 1));
  }
  if (config.algorithm == Algorithm::kDqn) {
    dqn_ = std::make_unique<rl::DqnLearner>(
        rl::MakeQNetwork(obs_dim, rl::PushQLayers(envs::kPushNumActions),
                         encoder::kRepresentationDim, DeriveSeed(learner_seed, 0)),
        config.dqn);
  } else {
    const nn::SideInput side{encoder::kRepresentationDim, 0};
    ppo_ = std::make_unique<rl::PpoLearner>(
        nn::Network(obs_dim, rl::KeepPolicyLayers(envs::kKeepActionDim),
                    DeriveSeed(learner_seed, 1), side),
        nn::Network(obs_dim, rl::KeepPolicyLayers(1), DeriveSeed(learner_seed, 2),
                    side),
        config.ppo);
  }
}

const nn::Network& Agent::encoder() const {
  Check(encoder_.has_value(), "agent has no encoder");
  return *encoder_;
}

nn::Network& Agent::mutable_encoder() {
  Check(encoder_.has_value(), "agent has no encoder");
  return *encoder_;
}

nn::Network& Agent::mutable_prediction_head() {
  Check(head_.has_value(), "agent has no prediction head");
  return *head_;
}

encoder::ActionPredictor Agent::predictor() const {
  if (config_.env == envs::EnvId::kPush) {
    return {encoder::ActionHead::kCategorical, envs::kPushNumActions};
  }
  return {encoder::ActionHead::kGaussian, envs::kKeepActionDim};
}

rl::DqnLearner& Agent::dqn() {
  Check(dqn_ != nullptr, "agent has no DQN learner");
  return *dqn_;
}

const rl::DqnLearner& Agent::dqn() const {
  Check(dqn_ != nullptr, "agent has no DQN learner");
  return *dqn_;
}

rl::PpoLearner& Agent::ppo() {
  Check(ppo_ != nullptr, "agent has no PPO learner");
  return *ppo_;
}

const rl::PpoLearner& Agent::ppo() const {
  Check(ppo_ != nullptr, "agent has no PPO learner");
  return *ppo_;
}

void Agent::SaveCheckpoints(const fs::path& dir, int64_t step) const {
  fs::create_directories(dir);
  if (encoder_) SaveNetwork(*encoder_, step, dir / "encoder.ckpt");
  if (head_) SaveNetwork(*head_, step, dir / "prediction_head.ckpt");
  if (dqn_) SaveNetwork(dqn_->q_net(), step, dir / "q_net.ckpt");
  if (ppo_) {
    SaveNetwork(ppo_->policy(), step, dir / "policy.ckpt");
    SaveNetwork(ppo_->value(), step, dir / "value.ckpt");
    nn::Checkpoint log_std;
    log_std.step = step;
    log_std.tensors.push_back({"log_std", ppo_->log_std().value});
    WriteTextFile(dir / "log_std.ckpt",
                  [&](std::ostream& out) { nn::SaveCheckpoint(log_std, out); });
  }
}

void Agent::LoadCheckpoints(const fs::path& dir) {
  if (encoder_) LoadNetwork(*encoder_, dir / "encoder.ckpt");
  if (head_) LoadNetwork(*head_, dir / "prediction_head.ckpt");
  if (dqn_) LoadNetwork(dqn_->mutable_q_net(), dir / "q_net.ckpt");
  if (ppo_) {
    // The learner owns its networks privately; restore through copies.
    nn::Network policy = ppo_->policy();
    nn::Network value = ppo_->value();
    LoadNetwork(policy, dir / "policy.ckpt");
    LoadNetwork(value, dir / "value.ckpt");
    std::ifstream in(dir / "log_std.ckpt");
    Check(in.good(), "cannot open checkpoint " + (dir / "log_std.ckpt").string());
    nn::Checkpoint log_std = nn::LoadCheckpoint(in);
    Check(log_std.tensors.size() == 1 &&
              log_std.tensors[0].second.rows() == ppo_->log_std().value.rows(),
          "log_std checkpoint does not match the policy");
    ppo_ = std::make_unique<rl::PpoLearner>(std::move(policy), std::move(value),
                                            config_.ppo);
    ppo_->mutable_log_std().value = log_std.tensors[0].second;
  }
}

AgentActor::AgentActor(const Agent& agent, ActOptions options, uint64_t seed)
    : agent_(&agent), options_(options), rng_(seed) {
  if (agent.has_encoder()) {
    cursor_.emplace(agent.encoder());
    representation_ = cursor_->representation();
  } else {
    representation_ = Eigen::VectorXd::Zero(encoder::kRepresentationDim);
  }
}

distmath::ActionValue AgentActor::Act(const Eigen::VectorXd& observation) {
  distmath::ActionValue action;
  if (agent_->config().algorithm == Algorithm::kDqn) {
    action = rl::DqnAct(observation, representation_, agent_->dqn().q_net(),
                        options_.epsilon, rng_);
  } else {
    last_ppo_ = agent_->ppo().Act(observation, representation_, rng_,
                                  options_.deterministic);
    action = std::vector<double>(last_ppo_.action.data(),
                                 last_ppo_.action.data() + last_ppo_.action.size());
  }
  if (cursor_) representation_ = cursor_->Advance(observation);
  return action;
}

EgoActorFactory AgentEgo(const Agent& agent, ActOptions options) {
  return [&agent, options](uint64_t seed) -> EgoActor {
    auto actor = std::make_shared<AgentActor>(agent, options, seed);
    return [actor](const Eigen::VectorXd& observation) {
      return actor->Act(observation);
    };
  };
}

// ---------------------------------------------------------------------------
// Evaluation.

EvalResult Evaluate(const Agent& agent, int episodes, uint64_t seed,
                    int workers) {
  Check(episodes > 0, "evaluation needs at least one episode");
  const ExperimentConfig& config = agent.config();
  EvalResult result;
  result.episode_rewards.assign(episodes, 0.0);
  result.opponent_labels.assign(episodes, "");
  ParallelFor(episodes, workers, [&](int i) {
    const uint64_t episode_seed = DeriveSeed(seed, static_cast<uint64_t>(i));
    Rng rng(DeriveSeed(episode_seed, 2));
    envs::OpponentPolicy opponent = envs::SampleOpponentPolicy(
        envs::PolicySet::kTest, config.env, config.env_config, rng);
    auto env = envs::MakeEnvironment(config.env, config.env_config);
    Eigen::VectorXd observation = env->Reset(DeriveSeed(episode_seed, 0), opponent);
    AgentActor actor(agent, ActOptions{}, DeriveSeed(episode_seed, 1));
    double total = 0.0;
    while (!env->done()) {
      total += env->Step(actor.Act(observation)).reward;
      observation = env->Observation();
    }
    result.episode_rewards[i] = total;
    result.opponent_labels[i] = envs::PolicyName(opponent);
  });
  result.mean_reward = Mean(result.episode_rewards);
  return result;
}

double TrailingMean(const std::vector<double>& values, int window) {
  Check(window > 0, "window must be positive");
  if (values.empty()) return 0.0;
  const size_t n = std::min(values.size(), static_cast<size_t>(window));
  double sum = 0.0;
  for (size_t i = values.size() - n; i < values.size(); ++i) sum += values[i];
  return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Training.

void WriteMetricsCsv(const std::vector<MetricsRow>& rows, std::ostream& out) {
  out << "step,iteration,train_reward,test_reward,test_reward_ma,rl_loss,"
         "encoder_loss,epsilon\n";
  for (const MetricsRow& r : rows) {
    out << r.step << ',' << r.iteration << ',' << FormatDouble(r.train_reward)
        << ',' << FormatDouble(r.test_reward) << ','
        << FormatDouble(r.test_reward_ma) << ',' << FormatDouble(r.rl_loss) << ','
        << FormatDouble(r.encoder_loss) << ',' << FormatDouble(r.epsilon) << '\n';
  }
}

std::vector<MetricsRow> ReadMetricsCsv(std::istream& in) {
  std::string line;
  Check(static_cast<bool>(std::getline(in, line)) &&
            line.rfind("step,iteration,", 0) == 0,
        "metrics CSV header missing");
  std::vector<MetricsRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream s(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(s, cell, ',')) cells.push_back(cell);
    Check(cells.size() == 8, "metrics CSV row has " +
                                 std::to_string(cells.size()) + " cells");
    MetricsRow r;
    r.step = std::stoll(cells[0]);
    r.iteration = std::stoi(cells[1]);
    r.train_reward = std::stod(cells[2]);
    r.test_reward = std::stod(cells[3]);
    r.test_reward_ma = std::stod(cells[4]);
    r.rl_loss = std::stod(cells[5]);
    r.encoder_loss = std::stod(cells[6]);
    r.epsilon = std::stod(cells[7]);
    rows.push_back(r);
  }
  return rows;
}

TrainResult Train(const ExperimentConfig& config,
                  const MetricsCallback& on_metrics) {
  Trainer trainer(config, on_metrics);
  return trainer.Run();
}

CurveStats AggregateRuns(const std::vector<std::vector<MetricsRow>>& runs) {
  Check(!runs.empty(), "no runs to aggregate");
  const size_t n = runs[0].size();
  for (const auto& run : runs) {
    Check(run.size() == n, "runs have different evaluation schedules");
  }
  CurveStats stats;
  for (size_t i = 0; i < n; ++i) {
    std::vector<double> values;
    for (const auto& run : runs) {
      Check(run[i].step == runs[0][i].step,
            "runs have different evaluation schedules");
      values.push_back(run[i].test_reward_ma);
    }
    const double mean = Mean(values);
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    stats.steps.push_back(static_cast<double>(runs[0][i].step));
    stats.mean.push_back(mean);
    stats.stddev.push_back(values.size() > 1 ? std::sqrt(var / (values.size() - 1))
                                             : 0.0);
  }
  return stats;
}

// ---------------------------------------------------------------------------
// Analysis exports.

std::vector<envs::OpponentPolicy> ExportTestPolicies(envs::EnvId env) {
  if (env == envs::EnvId::kPush) return {envs::PushDefenderPolicy{0.5}};
  return {envs::KeepOpponentPolicy{-45.0, 1.0, 0.5},
          envs::KeepOpponentPolicy{90.0, 1.0, 0.4},
          envs::KeepOpponentPolicy{0.0, 1.0, 1.0}};
}

std::vector<encoder::RepresentationRow> CollectRepresentations(
    const Agent& agent, int episodes_per_policy, uint64_t seed, int workers) {
  Check(episodes_per_policy > 0, "episodes_per_policy must be positive");
  const ExperimentConfig& config = agent.config();
  std::vector<envs::OpponentPolicy> policies = envs::TrainingPolicies(config.env);
  for (const auto& p : ExportTestPolicies(config.env)) policies.push_back(p);
  const int n = static_cast<int>(policies.size()) * episodes_per_policy;
  std::vector<std::vector<encoder::RepresentationRow>> per_episode(n);
  ParallelFor(n, workers, [&](int index) {
    const auto& policy = policies[index / episodes_per_policy];
    const uint64_t episode_seed = DeriveSeed(seed, static_cast<uint64_t>(index));
    auto env = envs::MakeEnvironment(config.env, config.env_config);
    Eigen::VectorXd observation = env->Reset(DeriveSeed(episode_seed, 0), policy);
    AgentActor actor(agent, ActOptions{}, DeriveSeed(episode_seed, 1));
    const std::string label = envs::PolicyName(policy);
    int t = 0;
    while (!env->done()) {
      env->Step(actor.Act(observation));
      per_episode[index].push_back({index, label, t, actor.representation()});
      observation = env->Observation();
      ++t;
    }
  });
  std::vector<encoder::RepresentationRow> rows;
  for (auto& episode : per_episode) {
    for (auto& row : episode) rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd HeatmapMatrix(const DistributionStore& store, int index) {
  Check(index >= 0 && index < store.size(), "heatmap index out of range");
  const auto* table =
      std::get_if<distmath::FrequencyTable>(&store.distributions[index]);
  Check(table != nullptr,
        "heatmaps need a discrete joint-action store, not a sample set");
  Check(table->dims().size() == 2,
        "heatmaps need exactly one ego and one opponent action component");
  Check(table->total() > 0, "heatmap of an empty table");
  const int rows = table->dims()[0];
  const int cols = table->dims()[1];
  Eigen::MatrixXd matrix(rows, cols);
  for (int a = 0; a < rows; ++a) {
    for (int o = 0; o < cols; ++o) {
      const int components[2] = {a, o};
      matrix(a, o) = static_cast<double>(table->counts()[table->CellIndex(components)]) /
                     static_cast<double>(table->total());
    }
  }
  return matrix;
}

void WriteHeatmapCsv(const Eigen::MatrixXd& matrix, std::ostream& out) {
  out << "ego_action";
  for (int o = 0; o < matrix.cols(); ++o) out << ",opp_" << o;
  out << '\n';
  for (int a = 0; a < matrix.rows(); ++a) {
    out << a;
    for (int o = 0; o < matrix.cols(); ++o) out << ',' << FormatDouble(matrix(a, o));
    out << '\n';
  }
}

MdsExport ComputeMds(const std::vector<encoder::RepresentationRow>& rows,
                     MdsMode mode, int last_steps) {
  // Selected points, each with its label, episode and step.
  std::vector<MdsPoint> points;
  std::vector<Eigen::VectorXd> values;
  if (mode == MdsMode::kPerStep) {
    std::map<int64_t, int> episode_length;
    for (const auto& row : rows) {
      episode_length[row.episode_id] =
          std::max(episode_length[row.episode_id], row.t + 1);
    }
    for (const auto& row : rows) {
      if (last_steps > 0 && row.t < episode_length[row.episode_id] - last_steps) {
        continue;
      }
      points.push_back({row.label, row.episode_id, row.t});
      values.push_back(row.values);
    }
  } else {
    std::map<int64_t, int> slot;  // episode -> index into points
    std::vector<int> counts;
    for (const auto& row : rows) {
      auto [it, inserted] =
          slot.emplace(row.episode_id, static_cast<int>(points.size()));
      if (inserted) {
        points.push_back({row.label, row.episode_id, -1});
        values.push_back(Eigen::VectorXd::Zero(row.values.size()));
        counts.push_back(0);
      }
      values[it->second] += row.values;
      ++counts[it->second];
    }
    for (size_t i = 0; i < values.size(); ++i) values[i] /= counts[i];
  }
  Check(points.size() >= 3, "MDS needs at least 3 representation rows, got " +
                                std::to_string(points.size()));
  const int dim = static_cast<int>(values[0].size());
  Eigen::MatrixXd matrix(static_cast<Eigen::Index>(points.size()), dim);
  for (size_t i = 0; i < values.size(); ++i) {
    Check(values[i].size() == dim, "representation rows differ in width");
    matrix.row(static_cast<Eigen::Index>(i)) = values[i].transpose();
  }
  MdsExport result;
  result.mds = distmath::ClassicalMds(distmath::PairwiseDistances(matrix), 2);
  for (size_t i = 0; i < points.size(); ++i) {
    points[i].position = result.mds.coordinates.row(static_cast<Eigen::Index>(i))
                             .transpose();
  }
  result.points = std::move(points);
  return result;
}

void WriteMdsCsv(const MdsExport& mds, std::ostream& out) {
  out << "label,episode_id,t,x,y\n";
  for (const MdsPoint& p : mds.points) {
    out << p.label << ',' << p.episode_id << ',' << p.t << ','
        << FormatDouble(p.position.x()) << ',' << FormatDouble(p.position.y())
        << '\n';
  }
}

std::vector<std::pair<std::string, Eigen::VectorXd>> LabelCentroids(
    const std::vector<encoder::RepresentationRow>& rows) {
  std::vector<std::pair<std::string, Eigen::VectorXd>> centroids;
  std::vector<int> counts;
  for (const auto& row : rows) {
    auto it = std::find_if(centroids.begin(), centroids.end(),
                           [&](const auto& c) { return c.first == row.label; });
    if (it == centroids.end()) {
      centroids.emplace_back(row.label, Eigen::VectorXd::Zero(row.values.size()));
      counts.push_back(0);
      it = centroids.end() - 1;
    }
    it->second += row.values;
    ++counts[it - centroids.begin()];
  }
  for (size_t i = 0; i < centroids.size(); ++i) centroids[i].second /= counts[i];
  return centroids;
}

// ---------------------------------------------------------------------------
// Run directories.

fs::path DefaultOutputRoot() {
  const char* env = std::getenv("MPRLAB_OUT");
  if (env != nullptr && env[0] != '\0') return fs::path(env);
  return fs::path("runs");
}

void WriteDirectoryAtomically(const fs::path& final_dir,
                              const std::function<void(const fs::path&)>& fill) {
  Check(!final_dir.empty(), "empty output directory");
  Check(!fs::exists(final_dir),
        "output directory " + final_dir.string() + " already exists");
  fs::path parent = final_dir.parent_path();
  if (!parent.empty()) fs::create_directories(parent);
  fs::path temp = parent / ("." + final_dir.filename().string() + ".tmp-" +
                            std::to_string(::getpid()));
  fs::remove_all(temp);
  fs::create_directories(temp);
  try {
    fill(temp);
    fs::rename(temp, final_dir);
  } catch (...) {
    std::error_code ignored;
    fs::remove_all(temp, ignored);
    throw;
  }
}

std::string LabelFileName(const std::string& label) {
  std::string name;
  for (char c : label) {
    bool keep = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                (c >= '0' && c <= '9') || c == '.' || c == '-';
    name += keep ? c : '_';
  }
  return name;
}

void WriteRunArtifacts(const ExperimentConfig& config, const TrainResult& result,
                       const fs::path& dir) {
  fs::create_directories(dir);
  WriteTextFile(dir / "config.cfg",
                [&](std::ostream& out) { WriteConfig(config, out); });
  WriteTextFile(dir / "seeds.txt", [&](std::ostream& out) {
    out << "master = " << config.seed << '\n';
    const std::pair<const char*, SeedStream> streams[] = {
        {"encoder_init", SeedStream::kEncoderInit},
        {"learner_init", SeedStream::kLearnerInit},
        {"training", SeedStream::kTraining},
        {"training_episodes", SeedStream::kTrainingEpisodes},
        {"distribution_sampling", SeedStream::kDistributionSampling},
        {"projections", SeedStream::kProjections},
        {"evaluation", SeedStream::kEvaluation},
        {"export", SeedStream::kExport}};
    for (const auto& [name, stream] : streams) {
      out << name << " = " << StreamSeed(config.seed, stream) << '\n';
    }
  });
  WriteTextFile(dir / "metrics.csv",
                [&](std::ostream& out) { WriteMetricsCsv(result.metrics, out); });

  std::vector<double> steps, test, average;
  for (const auto& row : result.metrics) {
    steps.push_back(static_cast<double>(row.step));
    test.push_back(row.test_reward);
    average.push_back(row.test_reward_ma);
  }
  WriteTextFile(dir / "reward.svg", [&](std::ostream& out) {
    plot::WriteCurveSvg({{"test reward", steps, test, {}},
                         {"moving average", steps, average, {}}},
                        envs::EnvName(config.env) + " " +
                            AlgorithmName(config.algorithm) + " " +
                            EncoderModeName(config.mode),
                        "environment steps", "reward", out);
  });

  const auto& distances = result.distances ? result.distances : result.initial_distances;
  if (distances) {
    WriteTextFile(dir / "distances.csv", [&](std::ostream& out) {
      distmath::WriteDistanceMatrixCsv(*distances, out);
    });
  }
  if (result.initial_store && result.initial_store->space.is_discrete()) {
    const DistributionStore& store = *result.initial_store;
    for (int i = 0; i < store.size(); ++i) {
      WriteTextFile(dir / ("heatmap_" + LabelFileName(store.labels[i]) + ".csv"),
                    [&](std::ostream& out) {
                      WriteHeatmapCsv(HeatmapMatrix(store, i), out);
                    });
    }
  }

  if (config.export_episodes > 0 && result.agent) {
    auto rows = CollectRepresentations(
        *result.agent, config.export_episodes,
        StreamSeed(config.seed, SeedStream::kExport), config.workers);
    WriteTextFile(dir / "representations.csv", [&](std::ostream& out) {
      encoder::WriteRepresentationsCsv(rows, out);
    });
    MdsExport mds = ComputeMds(
        rows, config.mds_last_steps > 0 ? MdsMode::kPerStep : MdsMode::kEpisodeMean,
        config.mds_last_steps);
    WriteTextFile(dir / "mds.csv", [&](std::ostream& out) { WriteMdsCsv(mds, out); });
    std::vector<plot::ScatterPoint> points;
    for (const auto& p : mds.points) {
      points.push_back({p.position.x(), p.position.y(), p.label});
    }
    WriteTextFile(dir / "mds.svg", [&](std::ostream& out) {
      plot::WriteScatterSvg(points, "policy representations (MDS)", out);
    });
  }
  if (config.checkpoints && result.agent) {
    result.agent->SaveCheckpoints(dir / "checkpoints", result.environment_steps);
  }
}

}  // namespace orchestrator
}  // namespace mprlab
