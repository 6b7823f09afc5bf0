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

#include "mprlab/envs.h"

#include <cmath>
#include <istream>
#include <ostream>

#include "json.hpp"

namespace mprlab {
namespace envs {
namespace {

using json = nlohmann::json;

double Softplus(double x) {
  return x > 30.0 ? x : std::log1p(std::exp(x));
}

void Integrate(AgentState& agent, const Vec2& force, double mass,
               double damping, double max_speed, double dt) {
  agent.velocity = agent.velocity * (1.0 - damping) + force / mass * dt;
  const double speed = agent.velocity.norm();
  if (max_speed > 0.0 && speed > max_speed) {
    agent.velocity *= max_speed / speed;
  }
  agent.position += agent.velocity * dt;
}

Vec2 RandomPoint(Rng& rng, double range) {
  const double x = Uniform(rng, -range, range);
  const double y = Uniform(rng, -range, range);
  return Vec2(x, y);
}

json ActionToJson(const distmath::ActionValue& action) {
  if (const int* index = std::get_if<int>(&action)) return *index;
  return std::get<std::vector<double>>(action);
}

distmath::ActionValue ActionFromJson(const json& value) {
  if (value.is_number_integer()) return value.get<int>();
  Check(value.is_array(), "trace: action must be an index or an array");
  return value.get<std::vector<double>>();
}

json PolicyToJson(const OpponentPolicy& policy) {
  if (const auto* push = std::get_if<PushDefenderPolicy>(&policy)) {
    return json{{"threshold", push->threshold}};
  }
  const auto& keep = std::get<KeepOpponentPolicy>(policy);
  return json{{"angle", keep.angle},
              {"distance", keep.distance},
              {"force", keep.force}};
}

OpponentPolicy PolicyFromJson(EnvId env, const json& value) {
  if (env == EnvId::kPush) {
    return PushDefenderPolicy{value.at("threshold").get<double>()};
  }
  return KeepOpponentPolicy{value.at("angle").get<double>(),
                            value.at("distance").get<double>(),
                            value.at("force").get<double>()};
}

class PushEnvironment : public Environment {
 public:
  explicit PushEnvironment(const PushConfig& config) : config_(config) {}

  EnvId id() const override { return EnvId::kPush; }
  int observation_dim() const override { return kPushObservationDim; }
  int horizon() const override { return config_.horizon; }
  int num_actions() const override { return kPushNumActions; }
  int action_dim() const override { return 1; }
  distmath::JointActionSpace joint_action_space() const override {
    return distmath::JointActionSpace::Discrete({kPushNumActions, kPushNumActions});
  }

  Eigen::VectorXd Reset(uint64_t seed, const OpponentPolicy& opponent) override {
    Check(std::holds_alternative<PushDefenderPolicy>(opponent),
          "Push needs a defender policy");
    opponent_ = opponent;
    auto reset = ResetPush(config_, seed);
    state_ = reset.state;
    started_ = true;
    return reset.observation;
  }

  StepRecord Step(const distmath::ActionValue& ego_action) override {
    Check(started_, "Push: Step before Reset");
    Check(!done(), "Push: episode already finished");
    const int* action = std::get_if<int>(&ego_action);
    Check(action != nullptr, "Push: ego action must be an index");
    auto transition = StepPush(config_, state_, *action,
                               std::get<PushDefenderPolicy>(opponent_));
    state_ = transition.state;
    return transition.record;
  }

  Eigen::VectorXd Observation() const override { return PushObservation(state_); }
  bool done() const override { return state_.step >= config_.horizon; }
  const OpponentPolicy& opponent() const override { return opponent_; }

 private:
  PushConfig config_;
  PushState state_;
  OpponentPolicy opponent_ = PushDefenderPolicy{};
  bool started_ = false;
};

class KeepEnvironment : public Environment {
 public:
  explicit KeepEnvironment(const KeepConfig& config) : config_(config) {}

  EnvId id() const override { return EnvId::kKeep; }
  int observation_dim() const override { return kKeepObservationDim; }
  int horizon() const override { return config_.horizon; }
  int num_actions() const override { return 0; }
  int action_dim() const override { return kKeepActionDim; }
  distmath::JointActionSpace joint_action_space() const override {
    return distmath::JointActionSpace::Continuous({kKeepActionDim, kKeepActionDim});
  }

  Eigen::VectorXd Reset(uint64_t seed, const OpponentPolicy& opponent) override {
    Check(std::holds_alternative<KeepOpponentPolicy>(opponent),
          "Keep needs a (angle, distance, force) opponent");
    opponent_ = opponent;
    auto reset = ResetKeep(config_, seed);
    state_ = reset.state;
    started_ = true;
    return reset.observation;
  }

  StepRecord Step(const distmath::ActionValue& ego_action) override {
    Check(started_, "Keep: Step before Reset");
    Check(!done(), "Keep: episode already finished");
    const auto* force = std::get_if<std::vector<double>>(&ego_action);
    Check(force != nullptr && force->size() == 2,
          "Keep: ego action must be a 2-D force");
    auto transition = StepKeep(config_, state_, Vec2((*force)[0], (*force)[1]),
                               std::get<KeepOpponentPolicy>(opponent_));
    state_ = transition.state;
    return transition.record;
  }

  Eigen::VectorXd Observation() const override { return KeepObservation(state_); }
  bool done() const override { return state_.step >= config_.horizon; }
  const OpponentPolicy& opponent() const override { return opponent_; }

 private:
  KeepConfig config_;
  KeepState state_;
  OpponentPolicy opponent_ = KeepOpponentPolicy{};
  bool started_ = false;
};

}  // namespace

std::string EnvName(EnvId id) { return id == EnvId::kPush ? "push" : "keep"; }

EnvId ParseEnvId(const std::string& name) {
  if (name == "push") return EnvId::kPush;
  if (name == "keep") return EnvId::kKeep;
  Fail("unknown environment '" + name + "' (expected push or keep)");
}

int PushDefenderPolicy::Act(const PushState& state,
                            const PushConfig& config) const {
  const double attacker_distance = state.attacker.position.norm();
  const Vec2 goal =
      attacker_distance > threshold ? Vec2::Zero() : state.attacker.position;
  const Vec2 heading = goal - state.defender.position;
  if (heading.norm() < config.defender_stop_radius) return 0;
  if (std::abs(heading.x()) >= std::abs(heading.y())) {
    return heading.x() > 0.0 ? 1 : 2;
  }
  return heading.y() > 0.0 ? 3 : 4;
}

Vec2 KeepOpponentPolicy::Target() const {
  const double radians = angle * M_PI / 180.0;
  return Vec2(distance * std::cos(radians), distance * std::sin(radians));
}

Vec2 KeepOpponentPolicy::Force(const Vec2& ball_position) const {
  const Vec2 toward = Target() - ball_position;
  const double length = toward.norm();
  if (length < 1e-12) return Vec2::Zero();
  return toward * (force / length);
}

std::string PolicyName(const OpponentPolicy& policy) {
  if (const auto* push = std::get_if<PushDefenderPolicy>(&policy)) {
    return "d=" + FormatDouble(push->threshold);
  }
  const auto& keep = std::get<KeepOpponentPolicy>(policy);
  return FormatDouble(keep.angle) + ":" + FormatDouble(keep.distance) + ":" +
         FormatDouble(keep.force);
}

Vec2 PushActionDirection(int action) {
  switch (action) {
    case 0: return Vec2(0.0, 0.0);
    case 1: return Vec2(1.0, 0.0);
    case 2: return Vec2(-1.0, 0.0);
    case 3: return Vec2(0.0, 1.0);
    case 4: return Vec2(0.0, -1.0);
  }
  Fail("Push action " + std::to_string(action) + " outside [0, 5)");
}

PushReset ResetPush(const PushConfig& config, uint64_t seed) {
  Rng rng(seed);
  PushReset reset;
  reset.state.attacker.position = RandomPoint(rng, config.spawn_range);
  reset.state.defender.position = RandomPoint(rng, config.spawn_range);
  reset.observation = PushObservation(reset.state);
  return reset;
}

Eigen::VectorXd PushObservation(const PushState& state) {
  Eigen::VectorXd obs(kPushObservationDim);
  const Vec2& p = state.attacker.position;
  obs << -p.x(), -p.y(), state.defender.position.x() - p.x(),
      state.defender.position.y() - p.y(), state.attacker.velocity.x(),
      state.attacker.velocity.y();
  return obs;
}

double PushReward(const PushConfig& config, const PushState& state) {
  const double distance = state.attacker.position.norm();
  double reward = -distance;
  if (distance < config.attacker_radius + config.landmark_radius) {
    reward += config.touch_reward;
  }
  const double gap = (state.attacker.position - state.defender.position).norm();
  if (gap < config.attacker_radius + config.defender_radius) {
    reward -= config.collision_penalty;
  }
  return reward;
}

Transition<PushState> StepPush(const PushConfig& config, const PushState& state,
                               int ego_action,
                               const PushDefenderPolicy& defender) {
  const Vec2 ego_direction = PushActionDirection(ego_action);
  const int defender_action = defender.Act(state, config);

  Vec2 attacker_force = ego_direction * config.attacker_accel;
  Vec2 defender_force = PushActionDirection(defender_action) * config.defender_accel;
  const Vec2 delta = state.attacker.position - state.defender.position;
  const double gap = delta.norm();
  if (gap > 1e-12) {
    const double min_gap = config.attacker_radius + config.defender_radius;
    const double penetration =
        Softplus(-(gap - min_gap) / config.contact_margin) * config.contact_margin;
    const Vec2 contact = config.contact_force * penetration * delta / gap;
    attacker_force += contact;
    defender_force -= contact;
  }

  Transition<PushState> out;
  out.state = state;
  Integrate(out.state.attacker, attacker_force, config.attacker_mass,
            config.damping, config.attacker_max_speed, config.dt);
  Integrate(out.state.defender, defender_force, config.defender_mass,
            config.damping, config.defender_max_speed, config.dt);
  out.state.step = state.step + 1;

  out.record.observation = PushObservation(state);
  out.record.ego_action = ego_action;
  out.record.opp_action = {defender_action};
  out.record.reward = PushReward(config, out.state);
  out.record.done = out.state.step >= config.horizon;
  out.next_observation = PushObservation(out.state);
  return out;
}

KeepReset ResetKeep(const KeepConfig& config, uint64_t seed) {
  Rng rng(seed);
  KeepReset reset;
  reset.state.ball.position = RandomPoint(rng, config.spawn_range);
  reset.observation = KeepObservation(reset.state);
  return reset;
}

Eigen::VectorXd KeepObservation(const KeepState& state) {
  Eigen::VectorXd obs(kKeepObservationDim);
  obs << state.ball.position, state.ball.velocity;
  return obs;
}

double KeepReward(const KeepState& state) { return -state.ball.position.norm(); }

Transition<KeepState> StepKeep(const KeepConfig& config, const KeepState& state,
                               const Vec2& ego_force,
                               const KeepOpponentPolicy& opponent) {
  Check(ego_force.allFinite(), "Keep: ego force must be finite");
  Vec2 applied = ego_force;
  bool clamped = false;
  const double magnitude = applied.norm();
  if (magnitude > config.max_ego_force) {
    applied *= config.max_ego_force / magnitude;
    clamped = true;
  }
  const Vec2 pull = opponent.Force(state.ball.position);

  Transition<KeepState> out;
  out.state = state;
  Integrate(out.state.ball, applied + pull, config.ball_mass, config.damping,
            0.0, config.dt);
  out.state.step = state.step + 1;

  out.record.observation = KeepObservation(state);
  out.record.ego_action = std::vector<double>{applied.x(), applied.y()};
  out.record.opp_action = {std::vector<double>{pull.x(), pull.y()}};
  out.record.reward = KeepReward(out.state);
  out.record.done = out.state.step >= config.horizon;
  out.record.clamped = clamped;
  out.next_observation = KeepObservation(out.state);
  return out;
}

std::vector<OpponentPolicy> TrainingPolicies(EnvId env) {
  if (env == EnvId::kPush) {
    return {PushDefenderPolicy{0.1}, PushDefenderPolicy{0.3},
            PushDefenderPolicy{0.75}, PushDefenderPolicy{1.0}};
  }
  return {KeepOpponentPolicy{45.0, 1.0, 0.5}, KeepOpponentPolicy{170.0, 2.0, 1.0},
          KeepOpponentPolicy{-90.0, 1.5, 0.7}, KeepOpponentPolicy{0.0, 1.0, 0.3}};
}

OpponentPolicy SampleOpponentPolicy(PolicySet set, EnvId env,
                                    const EnvConfig& config, Rng& rng) {
  if (set == PolicySet::kTraining) {
    const auto policies = TrainingPolicies(env);
    return policies[UniformInt(rng, static_cast<int>(policies.size()))];
  }
  if (env == EnvId::kPush) return PushDefenderPolicy{0.5};
  const KeepConfig& k = config.keep;
  KeepOpponentPolicy policy;
  policy.angle = Uniform(rng, k.test_angle_lo, k.test_angle_hi);
  policy.distance = Uniform(rng, k.test_distance_lo, k.test_distance_hi);
  policy.force = Uniform(rng, k.test_force_lo, k.test_force_hi);
  return policy;
}

std::unique_ptr<Environment> MakeEnvironment(EnvId id, const EnvConfig& config) {
  if (id == EnvId::kPush) return std::make_unique<PushEnvironment>(config.push);
  return std::make_unique<KeepEnvironment>(config.keep);
}

void WriteTrace(const EpisodeTrace& trace, std::ostream& out) {
  json header = {{"type", "header"},
                 {"env", EnvName(trace.header.env)},
                 {"seed", trace.header.seed},
                 {"opponent", PolicyToJson(trace.header.opponent)},
                 {"label", trace.header.label},
                 {"steps", trace.steps.size()}};
  out << header.dump() << '\n';
  for (size_t t = 0; t < trace.steps.size(); ++t) {
    const StepRecord& step = trace.steps[t];
    json opp = json::array();
    for (const auto& a : step.opp_action) opp.push_back(ActionToJson(a));
    json line = {{"type", "step"},
                 {"t", t},
                 {"observation", std::vector<double>(step.observation.data(),
                                                     step.observation.data() +
                                                         step.observation.size())},
                 {"ego_action", ActionToJson(step.ego_action)},
                 {"opp_action", opp},
                 {"reward", step.reward},
                 {"done", step.done},
                 {"clamped", step.clamped}};
    out << line.dump() << '\n';
  }
}

std::vector<EpisodeTrace> ReadTraces(std::istream& in) {
  std::vector<EpisodeTrace> traces;
  std::string line;
  size_t expected = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json value;
    try {
      value = json::parse(line);
    } catch (const json::exception& e) {
      Fail(std::string("trace: malformed line: ") + e.what());
    }
    const std::string type = value.at("type").get<std::string>();
    if (type == "header") {
      Check(traces.empty() || traces.back().steps.size() == expected,
            "trace: previous episode is truncated");
      EpisodeTrace trace;
      trace.header.env = ParseEnvId(value.at("env").get<std::string>());
      trace.header.seed = value.at("seed").get<uint64_t>();
      trace.header.opponent = PolicyFromJson(trace.header.env, value.at("opponent"));
      trace.header.label = value.at("label").get<int>();
      expected = value.at("steps").get<size_t>();
      traces.push_back(std::move(trace));
      continue;
    }
    Check(type == "step", "trace: unknown record type " + type);
    Check(!traces.empty(), "trace: step before header");
    StepRecord step;
    const auto obs = value.at("observation").get<std::vector<double>>();
    step.observation = Eigen::Map<const Eigen::VectorXd>(obs.data(), obs.size());
    step.ego_action = ActionFromJson(value.at("ego_action"));
    for (const auto& a : value.at("opp_action")) {
      step.opp_action.push_back(ActionFromJson(a));
    }
    step.reward = value.at("reward").get<double>();
    step.done = value.at("done").get<bool>();
    step.clamped = value.at("clamped").get<bool>();
    traces.back().steps.push_back(std::move(step));
  }
  Check(traces.empty() || traces.back().steps.size() == expected,
        "trace: last episode is truncated");
  return traces;
}

}  // namespace envs
}  // namespace mprlab
