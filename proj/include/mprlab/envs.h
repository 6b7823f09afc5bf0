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

#ifndef MPRLAB_ENVS_H_
#define MPRLAB_ENVS_H_

// Two-agent particle environments with rule-based opponents.
//
// Push: an attacker (the ego agent) tries to touch a landmark fixed at the
// origin while a heavier, slower defender guards it. The defender heads for
// the landmark while the attacker is farther than its threshold d and for
// the attacker otherwise. Both agents choose among five discrete actions:
// no force, or unit force along +x, -x, +y, -y.
//
// Keep: the ego agent applies a bounded 2-D force to a ball to hold it at
// the origin while the opponent pulls the ball toward a fixed target point
// with a constant-magnitude force.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "mprlab/common.h"
#include "mprlab/distmath.h"

namespace mprlab {
namespace envs {

using Vec2 = Eigen::Vector2d;

enum class EnvId { kPush, kKeep };

std::string EnvName(EnvId id);
EnvId ParseEnvId(const std::string& name);

inline constexpr int kPushNumActions = 5;
inline constexpr int kPushObservationDim = 6;
inline constexpr int kKeepObservationDim = 4;
inline constexpr int kKeepActionDim = 2;

struct PushConfig {
  double attacker_mass = 1.0;
  double attacker_radius = 0.05;
  double attacker_accel = 4.0;
  double attacker_max_speed = 1.3;
  double defender_mass = 2.0;
  double defender_radius = 0.15;
  double defender_accel = 3.0;
  double defender_max_speed = 1.0;
  double landmark_radius = 0.05;
  double damping = 0.25;
  double dt = 0.1;
  double spawn_range = 0.5;  // agents spawn uniformly in [-r, r]^2
  // Soft contact between the two agents, as in the particle environments.
  double contact_force = 100.0;
  double contact_margin = 1e-3;
  // The defender idles once this close to its goal point.
  double defender_stop_radius = 0.1;
  double touch_reward = 2.0;
  double collision_penalty = 2.0;
  int horizon = 50;
};

struct KeepConfig {
  double ball_mass = 1.0;
  double damping = 0.25;
  double dt = 0.1;
  double max_ego_force = 2.0;
  double spawn_range = 0.1;  // ball spawns uniformly in [-r, r]^2
  int horizon = 100;
  // Test-opponent sampling ranges, [lo, hi).
  double test_angle_lo = -180.0;
  double test_angle_hi = 180.0;
  double test_distance_lo = 0.0;
  double test_distance_hi = 1.0;
  double test_force_lo = 0.2;
  double test_force_hi = 1.7;
};

struct EnvConfig {
  PushConfig push;
  KeepConfig keep;
};

struct AgentState {
  Vec2 position = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();
};

struct PushState {
  AgentState attacker;
  AgentState defender;
  int step = 0;
};

struct KeepState {
  AgentState ball;
  int step = 0;
};

struct PushDefenderPolicy {
  double threshold = 0.5;

  // Discrete action for the current state; a pure function of it.
  int Act(const PushState& state, const PushConfig& config) const;
};

struct KeepOpponentPolicy {
  double angle = 0.0;     // degrees, [-180, 180)
  double distance = 1.0;  // >= 0
  double force = 0.5;     // > 0

  Vec2 Target() const;
  // Pull of magnitude `force` toward the target; zero at the target.
  Vec2 Force(const Vec2& ball_position) const;
};

using OpponentPolicy = std::variant<PushDefenderPolicy, KeepOpponentPolicy>;

std::string PolicyName(const OpponentPolicy& policy);

struct StepRecord {
  Eigen::VectorXd observation;  // what the ego agent saw before acting
  distmath::ActionValue ego_action;
  std::vector<distmath::ActionValue> opp_action;
  double reward = 0.0;
  bool done = false;
  bool clamped = false;  // ego action was outside its bounds
};

template <typename State>
struct Transition {
  State state;
  StepRecord record;
  Eigen::VectorXd next_observation;
};

struct PushReset {
  PushState state;
  Eigen::VectorXd observation;
};

struct KeepReset {
  KeepState state;
  Eigen::VectorXd observation;
};

PushReset ResetPush(const PushConfig& config, uint64_t seed);
Eigen::VectorXd PushObservation(const PushState& state);
// -distance to the landmark, plus the touch bonus, minus the collision
// penalty.
double PushReward(const PushConfig& config, const PushState& state);
Transition<PushState> StepPush(const PushConfig& config, const PushState& state,
                               int ego_action,
                               const PushDefenderPolicy& defender);
// Unit direction of a discrete action; zero for action 0.
Vec2 PushActionDirection(int action);

KeepReset ResetKeep(const KeepConfig& config, uint64_t seed);
Eigen::VectorXd KeepObservation(const KeepState& state);
double KeepReward(const KeepState& state);
// Forces longer than max_ego_force are scaled back onto the disk and the
// record is flagged as clamped.
Transition<KeepState> StepKeep(const KeepConfig& config, const KeepState& state,
                               const Vec2& ego_force,
                               const KeepOpponentPolicy& opponent);

enum class PolicySet { kTraining, kTest };

std::vector<OpponentPolicy> TrainingPolicies(EnvId env);
OpponentPolicy SampleOpponentPolicy(PolicySet set, EnvId env,
                                    const EnvConfig& config, Rng& rng);

// One environment instance behind a uniform interface. The opponent policy
// is fixed from Reset until the episode ends.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual EnvId id() const = 0;
  virtual int observation_dim() const = 0;
  virtual int horizon() const = 0;
  // 0 for continuous action spaces.
  virtual int num_actions() const = 0;
  virtual int action_dim() const = 0;
  virtual distmath::JointActionSpace joint_action_space() const = 0;

  virtual Eigen::VectorXd Reset(uint64_t seed, const OpponentPolicy& opponent) = 0;
  virtual StepRecord Step(const distmath::ActionValue& ego_action) = 0;
  virtual Eigen::VectorXd Observation() const = 0;
  virtual bool done() const = 0;
  virtual const OpponentPolicy& opponent() const = 0;
};

std::unique_ptr<Environment> MakeEnvironment(EnvId id, const EnvConfig& config);

// Line-delimited episode traces: one JSON header line, then one JSON line
// per StepRecord.
struct TraceHeader {
  EnvId env = EnvId::kPush;
  uint64_t seed = 0;
  OpponentPolicy opponent;
  int label = 0;
};

struct EpisodeTrace {
  TraceHeader header;
  std::vector<StepRecord> steps;
};

void WriteTrace(const EpisodeTrace& trace, std::ostream& out);
// Reads every trace in the stream.
std::vector<EpisodeTrace> ReadTraces(std::istream& in);

}  // namespace envs
}  // namespace mprlab

#endif  // MPRLAB_ENVS_H_
