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
#include <set>
#include <sstream>

#include "doctest.h"

namespace mprlab {
namespace envs {
namespace {

PushState PushAt(Vec2 attacker, Vec2 defender) {
  PushState s;
  s.attacker.position = attacker;
  s.defender.position = defender;
  return s;
}

TEST_CASE("Push reset") {
  PushConfig config;
  for (uint64_t seed : {1ULL, 2ULL, 99ULL}) {
    auto a = ResetPush(config, seed);
    auto b = ResetPush(config, seed);
    CHECK(a.observation == b.observation);
    CHECK(a.state.attacker.position == b.state.attacker.position);
    CHECK(a.state.attacker.position.cwiseAbs().maxCoeff() <= config.spawn_range);
    // Relative position to the target is minus the attacker position: the
    // landmark sits at the origin.
    CHECK(a.observation.head<2>() == -a.state.attacker.position);
    CHECK(a.observation.size() == kPushObservationDim);
  }
}

TEST_CASE("Push observation hides the defender velocity") {
  auto s = PushAt(Vec2(0.2, 0.1), Vec2(-0.3, 0.4));
  s.attacker.velocity = Vec2(0.5, -0.5);
  auto obs = PushObservation(s);
  s.defender.velocity = Vec2(9.0, 9.0);
  CHECK(PushObservation(s) == obs);
  CHECK(obs(2) == doctest::Approx(-0.5));
  CHECK(obs(3) == doctest::Approx(0.3));
  CHECK(obs(4) == 0.5);
  CHECK(obs(5) == -0.5);
}

TEST_CASE("defender follows its threshold rule") {
  PushConfig config;
  PushDefenderPolicy defender{0.5};
  // Attacker at distance 0.8 > d: defender (at (1,0)) heads for the target.
  auto far = PushAt(Vec2(0.0, 0.8), Vec2(1.0, 0.0));
  CHECK(defender.Act(far, config) == 2);  // -x, toward the origin
  // Attacker at distance 0.3 <= d: defender heads for the attacker.
  auto near = PushAt(Vec2(0.0, 0.3), Vec2(0.0, -0.5));
  CHECK(defender.Act(near, config) == 3);  // +y, toward the attacker
  // Flipping d across the attacker distance flips only the goal.
  PushDefenderPolicy low{0.2};
  CHECK(low.Act(near, config) == 3);  // origin is also +y from (0,-0.5)
  auto side = PushAt(Vec2(0.3, 0.0), Vec2(0.0, -0.1));
  CHECK(PushDefenderPolicy{0.31}.Act(side, config) == 1);
  CHECK(PushDefenderPolicy{0.29}.Act(side, config) == 3);
  auto parked = PushAt(Vec2(0.9, 0.0), Vec2(0.001, 0.0));
  CHECK(defender.Act(parked, config) == 0);
}

TEST_CASE("Push step applies the defender rule and the reward") {
  PushConfig config;
  auto s = PushAt(Vec2(0.0, 0.8), Vec2(1.0, 0.0));
  auto t = StepPush(config, s, 0, PushDefenderPolicy{0.5});
  CHECK(std::get<int>(t.record.opp_action[0]) == 2);
  CHECK(t.state.defender.velocity.x() < 0.0);
  CHECK(t.state.step == 1);
  CHECK(t.record.observation == PushObservation(s));
  CHECK(t.next_observation == PushObservation(t.state));
  CHECK_THROWS_AS(StepPush(config, s, 5, PushDefenderPolicy{0.5}), Error);
  CHECK_THROWS_AS(StepPush(config, s, -1, PushDefenderPolicy{0.5}), Error);
}

TEST_CASE("Push reward terms") {
  PushConfig config;
  const double eps = 0.01;
  auto touching = PushAt(Vec2(eps, 0.0), Vec2(2.0, 2.0));
  CHECK(PushReward(config, touching) == doctest::Approx(-eps + 2.0));
  auto far = PushAt(Vec2(0.6, 0.8), Vec2(2.0, 2.0));
  CHECK(PushReward(config, far) == doctest::Approx(-1.0));
  auto collided = PushAt(Vec2(0.6, 0.8), Vec2(0.6, 0.7));
  CHECK(PushReward(config, collided) == doctest::Approx(-3.0));
}

TEST_CASE("Push contact pushes the agents apart") {
  PushConfig config;
  auto s = PushAt(Vec2(0.1, 0.0), Vec2(0.0, 0.0));
  auto t = StepPush(config, s, 0, PushDefenderPolicy{0.01});
  CHECK(t.state.attacker.velocity.x() > 0.0);
}

TEST_CASE("Keep reset and reward") {
  KeepConfig config;
  auto a = ResetKeep(config, 5);
  auto b = ResetKeep(config, 5);
  CHECK(a.observation == b.observation);
  CHECK(a.observation.size() == kKeepObservationDim);
  CHECK(a.state.ball.position.cwiseAbs().maxCoeff() <= config.spawn_range);
  CHECK(std::abs(KeepReward(a.state)) < 0.15);
  KeepState s;
  s.ball.position = Vec2(0.3, 0.4);
  CHECK(KeepReward(s) == doctest::Approx(-0.5));
}

TEST_CASE("Keep opponent geometry") {
  KeepOpponentPolicy policy{0.0, 1.0, 0.3};
  const Vec2 force = policy.Force(Vec2::Zero());
  CHECK(force.x() == doctest::Approx(0.3));
  CHECK(force.y() == doctest::Approx(0.0));
  KeepOpponentPolicy diagonal{45.0, 1.0, 0.5};
  CHECK(diagonal.Target().x() == doctest::Approx(std::sqrt(0.5)));
  CHECK(diagonal.Force(diagonal.Target()).isZero());
}

TEST_CASE("Keep step forces") {
  KeepConfig config;
  KeepState rest;
  KeepOpponentPolicy policy{0.0, 1.0, 0.3};
  auto t = StepKeep(config, rest, Vec2(-0.3, 0.0), policy);
  CHECK(t.state.ball.position.isZero(0.0));
  CHECK(t.state.ball.velocity.isZero(0.0));
  CHECK(t.record.reward == 0.0);
  CHECK_FALSE(t.record.clamped);

  auto big = StepKeep(config, rest, Vec2(3.0, 4.0), policy);
  CHECK(big.record.clamped);
  const auto& applied = std::get<std::vector<double>>(big.record.ego_action);
  CHECK(std::hypot(applied[0], applied[1]) == doctest::Approx(2.0));
  const auto& pull = std::get<std::vector<double>>(big.record.opp_action[0]);
  CHECK(pull[0] == doctest::Approx(0.3));
  CHECK(big.record.reward <= 0.0);
  CHECK(big.record.reward == -big.state.ball.position.norm());
}

TEST_CASE("opponent policy sets") {
  EnvConfig config;
  Rng rng(3);
  auto push_test = SampleOpponentPolicy(PolicySet::kTest, EnvId::kPush, config, rng);
  CHECK(std::get<PushDefenderPolicy>(push_test).threshold == 0.5);
  std::set<double> thresholds;
  for (int k = 0; k < 200; ++k) {
    auto p = SampleOpponentPolicy(PolicySet::kTraining, EnvId::kPush, config, rng);
    thresholds.insert(std::get<PushDefenderPolicy>(p).threshold);
  }
  CHECK(thresholds == std::set<double>{0.1, 0.3, 0.75, 1.0});

  std::set<std::string> names;
  for (int k = 0; k < 200; ++k) {
    names.insert(PolicyName(
        SampleOpponentPolicy(PolicySet::kTraining, EnvId::kKeep, config, rng)));
  }
  CHECK(names == std::set<std::string>{"45:1:0.5", "170:2:1", "-90:1.5:0.7",
                                       "0:1:0.3"});
  for (int k = 0; k < 10000; ++k) {
    auto p = std::get<KeepOpponentPolicy>(
        SampleOpponentPolicy(PolicySet::kTest, EnvId::kKeep, config, rng));
    CHECK((p.angle >= -180.0 && p.angle < 180.0));
    CHECK((p.distance >= 0.0 && p.distance < 1.0));
    CHECK((p.force >= 0.2 && p.force < 1.7));
  }
}

TEST_CASE("environments are deterministic and stop at the horizon") {
  EnvConfig config;
  for (EnvId id : {EnvId::kPush, EnvId::kKeep}) {
    auto run = [&]() {
      auto env = MakeEnvironment(id, config);
      const auto opponent = TrainingPolicies(id)[1];
      env->Reset(17, opponent);
      Rng rng(4);
      std::vector<double> rewards;
      while (!env->done()) {
        distmath::ActionValue action;
        if (id == EnvId::kPush) {
          action = UniformInt(rng, kPushNumActions);
        } else {
          action = std::vector<double>{Uniform(rng, -2, 2), Uniform(rng, -2, 2)};
        }
        rewards.push_back(env->Step(action).reward);
      }
      CHECK_THROWS_AS(env->Step(id == EnvId::kPush
                                    ? distmath::ActionValue(0)
                                    : distmath::ActionValue(std::vector<double>{0, 0})),
                      Error);
      return rewards;
    };
    const auto a = run();
    CHECK(a == run());
    CHECK(static_cast<int>(a.size()) ==
          (id == EnvId::kPush ? config.push.horizon : config.keep.horizon));
  }
}

TEST_CASE("episode traces round-trip") {
  EnvConfig config;
  auto env = MakeEnvironment(EnvId::kKeep, config);
  EpisodeTrace trace;
  trace.header = {EnvId::kKeep, 9, KeepOpponentPolicy{45.0, 1.0, 0.5}, 0};
  env->Reset(9, trace.header.opponent);
  for (int t = 0; t < 5; ++t) {
    trace.steps.push_back(env->Step(std::vector<double>{0.1 * t, 3.0}));
  }
  EpisodeTrace push;
  push.header = {EnvId::kPush, 4, PushDefenderPolicy{0.75}, 2};
  auto penv = MakeEnvironment(EnvId::kPush, config);
  penv->Reset(4, push.header.opponent);
  for (int t = 0; t < 3; ++t) push.steps.push_back(penv->Step(t));

  std::stringstream stream;
  WriteTrace(trace, stream);
  WriteTrace(push, stream);
  auto back = ReadTraces(stream);
  REQUIRE(back.size() == 2);
  CHECK(back[0].header.seed == 9);
  CHECK(PolicyName(back[0].header.opponent) == "45:1:0.5");
  CHECK(back[1].header.label == 2);
  for (size_t t = 0; t < trace.steps.size(); ++t) {
    CHECK(back[0].steps[t].observation == trace.steps[t].observation);
    CHECK(back[0].steps[t].reward == trace.steps[t].reward);
    CHECK(back[0].steps[t].ego_action == trace.steps[t].ego_action);
    CHECK(back[0].steps[t].clamped == trace.steps[t].clamped);
  }
  CHECK(back[1].steps[2].opp_action == push.steps[2].opp_action);

  std::stringstream truncated;
  WriteTrace(trace, truncated);
  std::string text = truncated.str();
  text.resize(text.rfind('{'));
  std::stringstream cut(text);
  CHECK_THROWS_AS(ReadTraces(cut), Error);
}

}  // namespace
}  // namespace envs
}  // namespace mprlab
