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

#ifndef MPRLAB_ORCHESTRATOR_H_
#define MPRLAB_ORCHESTRATOR_H_

// Joint training of the policy-representation encoder and the ego learner.
//
// Each iteration draws training opponents, collects episodes into a buffer
// that keeps observation histories next to the RL data, runs the RL updates
// and then the encoder updates. The metric-embedding encoder regresses
// representation distances onto distances between the opponents'
// joint-action distributions, which are sampled once at the start (mpr-nors)
// or again every resample period with the current ego policy (mpr-rs).
//
// Rollouts for distribution sampling, evaluation and export fan out over
// worker threads. Every episode derives its own seed, and results are merged
// in episode order, so outputs do not depend on the worker count.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mprlab/common.h"
#include "mprlab/config.h"
#include "mprlab/distmath.h"
#include "mprlab/encoder.h"
#include "mprlab/envs.h"
#include "mprlab/nn.h"
#include "mprlab/rl.h"

namespace mprlab {
namespace orchestrator {

// Independent RNG streams derived from the master seed.
enum class SeedStream : uint64_t {
  kEncoderInit = 1,
  kLearnerInit = 2,
  kTraining = 3,
  kTrainingEpisodes = 4,
  kDistributionSampling = 5,
  kProjections = 6,
  kEvaluation = 7,
  kExport = 8,
};

uint64_t StreamSeed(uint64_t master, SeedStream stream);

// ---------------------------------------------------------------------------
// Joint-action distributions.

struct DistributionStore {
  std::vector<std::string> labels;  // one per training policy
  std::vector<distmath::Distribution> distributions;
  distmath::JointActionSpace space;

  int size() const { return static_cast<int>(labels.size()); }
};

// Chooses the ego action for one episode from the current observation. An
// actor may keep per-episode state.
using EgoActor = std::function<distmath::ActionValue(const Eigen::VectorXd&)>;
// Builds a fresh actor for an episode from that episode's seed.
using EgoActorFactory = std::function<EgoActor(uint64_t episode_seed)>;

// Uniform over the discrete actions, or uniform over the force disk.
EgoActorFactory UniformRandomEgo(envs::EnvId env, const envs::EnvConfig& config);

// Rolls out `num_sample` episodes against each policy and accumulates every
// (ego action, opponent action) pair into that policy's distribution:
// a smoothed frequency table for discrete spaces, a sample set otherwise.
DistributionStore SampleDistributions(
    envs::EnvId env, const envs::EnvConfig& env_config,
    const std::vector<envs::OpponentPolicy>& policies, int num_sample,
    const EgoActorFactory& ego, uint64_t seed, double smoothing, int workers);

// Symmetric KL for frequency tables, sliced Wasserstein for sample sets.
distmath::PolicyDistanceMatrix ComputeDistances(const DistributionStore& store,
                                                const DistanceConfig& config,
                                                uint64_t projection_seed,
                                                int workers);

// ---------------------------------------------------------------------------
// Agent.

// The networks of one ego agent. Without an encoder the learner receives
// zero representations.
class Agent {
 public:
  explicit Agent(const ExperimentConfig& config);
  Agent(const Agent&) = delete;
  Agent& operator=(const Agent&) = delete;

  const ExperimentConfig& config() const { return config_; }
  bool has_encoder() const { return encoder_.has_value(); }
  const nn::Network& encoder() const;
  nn::Network& mutable_encoder();
  bool has_prediction_head() const { return head_.has_value(); }
  nn::Network& mutable_prediction_head();
  encoder::ActionPredictor predictor() const;

  rl::DqnLearner& dqn();
  const rl::DqnLearner& dqn() const;
  rl::PpoLearner& ppo();
  const rl::PpoLearner& ppo() const;

  // Checkpoint files (*.ckpt) for every network, keyed by role.
  void SaveCheckpoints(const std::filesystem::path& dir, int64_t step) const;
  void LoadCheckpoints(const std::filesystem::path& dir);

 private:
  ExperimentConfig config_;
  std::optional<nn::Network> encoder_;
  std::optional<nn::Network> head_;
  std::unique_ptr<rl::DqnLearner> dqn_;
  std::unique_ptr<rl::PpoLearner> ppo_;
};

// How an actor built from an agent explores.
struct ActOptions {
  double epsilon = 0.0;        // DQN
  bool deterministic = true;   // PPO: squashed mean when true
};

// Tracks the episode's representation while acting. The representation
// used for the action at step t summarizes the observations before t.
class AgentActor {
 public:
  AgentActor(const Agent& agent, ActOptions options, uint64_t seed);

  // Acts on the current representation, then consumes the observation.
  distmath::ActionValue Act(const Eigen::VectorXd& observation);
  // Representation after the observations consumed so far.
  const Eigen::VectorXd& representation() const { return representation_; }
  // Sampling details of the latest PPO action.
  const rl::PpoActResult& last_ppo() const { return last_ppo_; }
  void set_epsilon(double epsilon) { options_.epsilon = epsilon; }

 private:
  const Agent* agent_;
  ActOptions options_;
  Rng rng_;
  std::optional<encoder::EncoderCursor> cursor_;
  Eigen::VectorXd representation_;
  rl::PpoActResult last_ppo_;
};

EgoActorFactory AgentEgo(const Agent& agent, ActOptions options);

// ---------------------------------------------------------------------------
// Evaluation.

struct EvalResult {
  double mean_reward = 0.0;
  std::vector<double> episode_rewards;
  std::vector<std::string> opponent_labels;
};

// Greedy (DQN) or mean-action (PPO) episodes against the test set: d = 0.5
// on Push, a freshly sampled opponent per episode on Keep.
EvalResult Evaluate(const Agent& agent, int episodes, uint64_t seed,
                    int workers);

// Mean of the most recent `window` values.
double TrailingMean(const std::vector<double>& values, int window);

// ---------------------------------------------------------------------------
// Training.

struct MetricsRow {
  int64_t step = 0;  // environment steps so far
  int iteration = 0;
  double train_reward = 0.0;  // mean episode return since the previous row
  double test_reward = 0.0;
  double test_reward_ma = 0.0;  // trailing mean over the evaluation window
  double rl_loss = 0.0;       // mean since the previous row
  double encoder_loss = 0.0;  // mean since the previous row
  double epsilon = 0.0;       // DQN exploration rate; PPO reports 0
};

void WriteMetricsCsv(const std::vector<MetricsRow>& rows, std::ostream& out);
std::vector<MetricsRow> ReadMetricsCsv(std::istream& in);

struct TrainResult {
  std::unique_ptr<Agent> agent;
  std::vector<MetricsRow> metrics;
  // Distributions and distances from the initial random-ego sampling, kept
  // for every encoder mode.
  std::optional<DistributionStore> initial_store;
  std::optional<distmath::PolicyDistanceMatrix> initial_distances;
  // The distances in effect at the end of training.
  std::optional<distmath::PolicyDistanceMatrix> distances;
  int distance_rebuilds = 0;  // re-samplings after the initial one
  int64_t environment_steps = 0;
};

using MetricsCallback = std::function<void(const MetricsRow&)>;

// Runs the configured experiment. Throws on invalid configs and halts on a
// non-finite loss.
TrainResult Train(const ExperimentConfig& config,
                  const MetricsCallback& on_metrics = nullptr);

// Mean and sample standard deviation of the moving-average test reward
// across runs with the same evaluation schedule.
struct CurveStats {
  std::vector<double> steps;
  std::vector<double> mean;
  std::vector<double> stddev;
};
CurveStats AggregateRuns(const std::vector<std::vector<MetricsRow>>& runs);

// ---------------------------------------------------------------------------
// Analysis exports.

// Greedy episodes against every training policy and the named test
// policies. Every step yields the representation after that step's
// observation.
std::vector<encoder::RepresentationRow> CollectRepresentations(
    const Agent& agent, int episodes_per_policy, uint64_t seed, int workers);

// Opponents used for representation exports besides the training set.
std::vector<envs::OpponentPolicy> ExportTestPolicies(envs::EnvId env);

// Ego-action by opponent-action frequencies (rows by columns) for one
// discrete two-player store entry. Each matrix sums to 1.
Eigen::MatrixXd HeatmapMatrix(const DistributionStore& store, int index);
void WriteHeatmapCsv(const Eigen::MatrixXd& matrix, std::ostream& out);

enum class MdsMode { kPerStep, kEpisodeMean };

struct MdsPoint {
  std::string label;
  int64_t episode_id = 0;
  int t = 0;  // -1 for episode means
  Eigen::Vector2d position = Eigen::Vector2d::Zero();
};

struct MdsExport {
  std::vector<MdsPoint> points;
  distmath::MdsResult mds;
};

// Per-step mode keeps the final `last_steps` steps of every episode (all
// steps when 0); episode-mean mode averages each episode's rows.
MdsExport ComputeMds(const std::vector<encoder::RepresentationRow>& rows,
                     MdsMode mode, int last_steps);
void WriteMdsCsv(const MdsExport& mds, std::ostream& out);

// Mean of the representation rows of each label, in first-seen label order.
std::vector<std::pair<std::string, Eigen::VectorXd>> LabelCentroids(
    const std::vector<encoder::RepresentationRow>& rows);

// ---------------------------------------------------------------------------
// Run directories.

// `MPRLAB_OUT` when set, otherwise ./runs.
std::filesystem::path DefaultOutputRoot();

// Builds the directory under a temporary name next to `final_dir` and
// renames it into place only after `fill` succeeds. Fails if `final_dir`
// already exists.
void WriteDirectoryAtomically(
    const std::filesystem::path& final_dir,
    const std::function<void(const std::filesystem::path&)>& fill);

// Writes every training artifact into `dir`: config.cfg, seeds.txt,
// metrics.csv, distances.csv, heatmap_<label>.csv, representations.csv,
// mds.csv, mds.svg, reward.svg and checkpoints/.
void WriteRunArtifacts(const ExperimentConfig& config,
                       const TrainResult& result,
                       const std::filesystem::path& dir);

// Safe file-name fragment for a policy label.
std::string LabelFileName(const std::string& label);

}  // namespace orchestrator
}  // namespace mprlab

#endif  // MPRLAB_ORCHESTRATOR_H_
