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

#include <cmath>
#include <map>
#include <numbers>

#include "doctest.h"
#include "gradcheck.h"

namespace mprlab {
namespace rl {
namespace {

using nn::Activation;
using nn::LayerSpec;
using nn::Network;

constexpr int kObs = 3;
constexpr int kRep = 4;

Eigen::MatrixXd RandomMatrix(Rng& rng, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = Uniform(rng, -1, 1);
  return m;
}

Network SmallQ(uint64_t seed) {
  return MakeQNetwork(kObs,
                      {LayerSpec::Dense(8, Activation::kTanh),
                       LayerSpec::Dense(8, Activation::kTanh),
                       LayerSpec::Dense(5, Activation::kIdentity)},
                      kRep, seed);
}

// Q-network whose outputs are the constant `bias` for every input.
Network ConstantQ(const Eigen::VectorXd& bias) {
  Network net = SmallQ(1);
  for (nn::Parameter* p : net.Parameters()) {
    if (p->name == "layer2.weight") p->value.setZero();
    if (p->name == "layer2.bias") p->value = bias;
  }
  return net;
}

ReplayEntry RandomEntry(Rng& rng, int64_t episode, int t) {
  ReplayEntry e;
  e.observation = RandomMatrix(rng, kObs, 1).col(0);
  e.representation = RandomMatrix(rng, kRep, 1).col(0);
  e.next_observation = RandomMatrix(rng, kObs, 1).col(0);
  e.next_representation = RandomMatrix(rng, kRep, 1).col(0);
  e.action = UniformInt(rng, 5);
  e.reward = Uniform(rng, -2, 2);
  e.done = UniformUnit(rng) < 0.2;
  e.episode_id = episode;
  e.t = t;
  return e;
}

DqnBatch RandomBatch(Rng& rng, int n) {
  std::vector<ReplayEntry> entries;
  for (int k = 0; k < n; ++k) entries.push_back(RandomEntry(rng, 0, k));
  std::vector<const ReplayEntry*> ptrs;
  for (const auto& e : entries) ptrs.push_back(&e);
  return MakeDqnBatch(ptrs);
}

TEST_CASE("epsilon-greedy action selection") {
  Rng rng(1);
  const Network q = ConstantQ((Eigen::VectorXd(5) << 3, 1, 0, 0, 0).finished());
  const Eigen::VectorXd obs = Eigen::VectorXd::Zero(kObs);
  const Eigen::VectorXd rep = Eigen::VectorXd::Zero(kRep);
  CHECK(DqnAct(obs, rep, q, 0.0, rng) == 0);
  const Network shifted = ConstantQ((Eigen::VectorXd(5) << 103, 101, 100, 100, 100).finished());
  CHECK(DqnAct(obs, rep, shifted, 0.0, rng) == 0);

  const int draws = 100000;
  std::vector<int> counts(5, 0);
  for (int k = 0; k < draws; ++k) ++counts[DqnAct(obs, rep, q, 1.0, rng)];
  const double p = 0.2;
  const double sigma = std::sqrt(draws * p * (1 - p));
  for (int c : counts) CHECK(std::abs(c - draws * p) < 3.0 * sigma);
  CHECK_THROWS_AS(DqnAct(obs, rep, q, 1.5, rng), Error);
}

TEST_CASE("epsilon schedule") {
  CHECK(LinearEpsilon(0, 1000, 1.0, 0.05, 0.2) == 1.0);
  CHECK(LinearEpsilon(100, 1000, 1.0, 0.05, 0.2) == doctest::Approx(0.525));
  CHECK(LinearEpsilon(200, 1000, 1.0, 0.05, 0.2) == 0.05);
  CHECK(LinearEpsilon(999, 1000, 1.0, 0.05, 0.2) == 0.05);
}

TEST_CASE("TD targets and Huber loss") {
  CHECK(Huber(0.5, 1.0) == 0.125);
  CHECK(Huber(-1.5, 1.0) == 1.0);
  const Eigen::VectorXd bias = (Eigen::VectorXd(5) << 3, 1, 0, 0, 0).finished();
  const Network q = ConstantQ(bias);
  Rng rng(2);
  ReplayEntry e = RandomEntry(rng, 0, 0);
  e.action = 1;
  e.reward = 1.0;
  e.done = false;
  const ReplayEntry* one[] = {&e};
  DqnBatch batch = MakeDqnBatch(one);
  CHECK(TdTargets(batch, q, 0.5)(0) == doctest::Approx(2.5));
  // Q = 1 against a target of 2.5: Huber(-1.5) with delta 1.
  CHECK(DqnLoss(batch, q, q, 0.5, 1.0) == doctest::Approx(1.0));
  batch.dones[0] = true;
  CHECK(TdTargets(batch, q, 0.5)(0) == 1.0);

  DqnBatch random = RandomBatch(rng, 16);
  const Eigen::VectorXd zero_gamma = TdTargets(random, SmallQ(3), 0.0);
  CHECK(zero_gamma == random.rewards);
}

TEST_CASE("DQN gradient matches finite differences") {
  Rng rng(3);
  Network q = SmallQ(4);
  const Network target = SmallQ(5);
  DqnBatch batch = RandomBatch(rng, 6);
  // Keep TD errors within the quadratic zone and away from the kink.
  batch.rewards *= 0.1;
  const double error = testing::MaxParameterGradientError(
      q.Parameters(), [&]() { return DqnLoss(batch, q, target, 0.9, 10.0); },
      [&]() { DqnLossAndGradient(batch, q, target, 0.9, 10.0); });
  CHECK(error < 1e-4);

  q.ZeroGrad();
  const DqnGradient g = DqnLossAndGradient(batch, q, target, 0.9, 10.0);
  Eigen::MatrixXd reps = batch.representations;
  const auto numeric = testing::NumericGradient(reps, [&]() {
    DqnBatch copy = batch;
    copy.representations = reps;
    return DqnLoss(copy, q, target, 0.9, 10.0);
  });
  CHECK(testing::RelativeError(g.representation_grad, numeric) < 1e-6);
}

TEST_CASE("zero representations leave the side weights untouched") {
  Rng rng(4);
  Network q = SmallQ(6);
  DqnBatch batch = RandomBatch(rng, 8);
  batch.representations.setZero();
  batch.next_representations.setZero();
  q.ZeroGrad();
  DqnLossAndGradient(batch, q, q, 0.9, 1.0);
  for (nn::Parameter* p : q.Parameters()) {
    if (p->name == "layer1.weight") {
      CHECK(p->value.cols() == 8 + kRep);
      CHECK(p->grad.rightCols(kRep).isZero(0.0));
      CHECK_FALSE(p->grad.leftCols(8).isZero(0.0));
    }
  }
}

TEST_CASE("target network changes only at sync events") {
  Rng rng(5);
  DqnConfig config;
  config.target_sync_period = 3;
  DqnLearner learner(SmallQ(7), config);
  const uint64_t initial = nn::ParameterHash(learner.target_net());
  CHECK(initial == nn::ParameterHash(learner.q_net()));
  for (int k = 1; k <= 7; ++k) {
    const uint64_t before = nn::ParameterHash(learner.target_net());
    learner.Update(RandomBatch(rng, 8));
    const uint64_t after = nn::ParameterHash(learner.target_net());
    if (k % 3 == 0) {
      CHECK(after != before);
      CHECK(after == nn::ParameterHash(learner.q_net()));
    } else {
      CHECK(after == before);
    }
  }
  CHECK(learner.target_syncs() == 2);

  DqnBatch bad = RandomBatch(rng, 4);
  bad.rewards(0) = std::nan("");
  CHECK_THROWS_AS(learner.Update(bad), Error);
}

TEST_CASE("DQN updates are reproducible") {
  auto run = []() {
    Rng rng(8);
    DqnLearner learner(SmallQ(9), {});
    std::vector<double> losses;
    for (int k = 0; k < 5; ++k) losses.push_back(learner.Update(RandomBatch(rng, 8)).loss);
    return std::make_pair(losses, nn::ParameterHash(learner.q_net()));
  };
  CHECK(run() == run());
}

TEST_CASE("replay buffer keeps episodes with their histories") {
  Rng rng(6);
  ReplayBuffer buffer(10);
  for (int e = 0; e < 4; ++e) {
    std::vector<ReplayEntry> entries;
    for (int t = 0; t < 4; ++t) entries.push_back(RandomEntry(rng, e, t));
    auto h = std::make_shared<encoder::ObservationHistory>();
    h->episode_id = e;
    buffer.AddEpisode(std::move(entries), h);
  }
  // 16 entries exceed the capacity of 10: the two oldest episodes go.
  CHECK(buffer.size() == 8);
  CHECK(buffer.num_episodes() == 2);
  CHECK(buffer.histories()[0]->episode_id == 2);
  CHECK(buffer.histories()[1]->episode_id == 3);

  std::map<std::pair<int64_t, int>, int> counts;
  const int draws = 80000;
  for (const ReplayEntry* e : buffer.Sample(draws, rng)) {
    ++counts[{e->episode_id, e->t}];
    CHECK(buffer.HistoryOf(*e)->episode_id == e->episode_id);
  }
  CHECK(counts.size() == 8);
  const double sigma = std::sqrt(draws * 0.125 * 0.875);
  for (const auto& [key, c] : counts) CHECK(std::abs(c - draws / 8.0) < 3 * sigma);
  CHECK_THROWS_AS(ReplayBuffer(1).Sample(1, rng), Error);

  // Refreshing an episode rewrites both representations of every entry.
  const int dim = static_cast<int>(buffer.episode_entries(1)[0].representation.size());
  Eigen::MatrixXd prefixes(dim, 5);
  for (int t = 0; t < 5; ++t) prefixes.col(t).setConstant(t);
  buffer.SetEpisodeRepresentations(1, prefixes);
  for (const ReplayEntry& e : buffer.episode_entries(1)) {
    CHECK(e.representation == prefixes.col(e.t));
    CHECK(e.next_representation == prefixes.col(e.t + 1));
  }
  CHECK_THROWS_AS(buffer.SetEpisodeRepresentations(1, prefixes.leftCols(4)), Error);

  HistoryBuffer histories(2);
  for (int e = 0; e < 3; ++e) {
    auto h = std::make_shared<encoder::ObservationHistory>();
    h->episode_id = e;
    histories.Add(h);
  }
  CHECK(histories.size() == 2);
  CHECK(histories.histories()[0]->episode_id == 1);
}

TEST_CASE("squashed Gaussian head") {
  Rng rng(7);
  const double bound = 2.0;
  for (int k = 0; k < 2000; ++k) {
    Eigen::VectorXd u(2);
    u << 5.0 * StandardNormal(rng), 5.0 * StandardNormal(rng);
    CHECK(SquashAction(u, bound).norm() <= bound);
  }

  // The log-determinant against a finite-difference Jacobian.
  for (double scale : {1e-6, 1e-3, 0.3, 1.0, 2.5}) {
    Eigen::VectorXd u(2);
    u << 0.6 * scale, -0.8 * scale;
    Eigen::Matrix2d jacobian;
    const double h = 1e-6;
    for (int j = 0; j < 2; ++j) {
      Eigen::VectorXd up = u, down = u;
      up(j) += h;
      down(j) -= h;
      jacobian.col(j) = (SquashAction(up, bound) - SquashAction(down, bound)) / (2 * h);
    }
    CHECK(SquashLogDet(u, bound) ==
          doctest::Approx(std::log(std::abs(jacobian.determinant()))).epsilon(1e-6));
  }

  const Eigen::VectorXd mean = (Eigen::VectorXd(2) << 0.3, -0.2).finished();
  const Eigen::VectorXd log_std = (Eigen::VectorXd(2) << -0.5, 0.2).finished();
  const double density_at_mean =
      1.0 / (2.0 * std::numbers::pi * std::exp(-0.5) * std::exp(0.2));
  CHECK(GaussianLogProb(mean, mean, log_std) ==
        doctest::Approx(std::log(density_at_mean)));
  CHECK(SquashedLogProb(mean, mean, log_std, bound) ==
        doctest::Approx(std::log(density_at_mean) - SquashLogDet(mean, bound)));
  CHECK(GaussianEntropy(log_std) ==
        doctest::Approx(-0.3 + std::log(2 * std::numbers::pi * std::exp(1.0))));

  PpoConfig config;
  config.initial_log_std = -30.0;
  PpoLearner learner(Network(kObs, KeepPolicyLayers(2), 1, {kRep, 0}),
                     Network(kObs, KeepPolicyLayers(1), 2, {kRep, 0}), config);
  const Eigen::VectorXd obs = Eigen::VectorXd::Constant(kObs, 0.1);
  const Eigen::VectorXd rep = Eigen::VectorXd::Zero(kRep);
  const PpoActResult sampled = learner.Act(obs, rep, rng, false);
  const PpoActResult greedy = learner.Act(obs, rep, rng, true);
  CHECK(sampled.action.isApprox(greedy.action, 1e-10));
}

TEST_CASE("GAE recursion") {
  const std::vector<double> rewards = {1.0, 0.0, 2.0};
  const std::vector<double> values = {0.5, 0.4, 0.3};
  const std::vector<bool> dones = {false, false, true};
  const double g = 0.9, l = 0.8;
  const GaeResult r = ComputeGae(rewards, values, dones, 99.0, g, l);
  const double d2 = 2.0 - 0.3;
  const double d1 = 0.0 + g * 0.3 - 0.4;
  const double d0 = 1.0 + g * 0.4 - 0.5;
  CHECK(r.advantages(2) == doctest::Approx(d2));
  CHECK(r.advantages(1) == doctest::Approx(d1 + g * l * d2));
  CHECK(r.advantages(0) == doctest::Approx(d0 + g * l * (d1 + g * l * d2)));
  CHECK(r.returns(0) == doctest::Approx(r.advantages(0) + 0.5));

  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + UniformInt(rng, 12);
    std::vector<double> rw(n), v(n);
    for (int t = 0; t < n; ++t) {
      rw[t] = Uniform(rng, -1, 1);
      v[t] = Uniform(rng, -1, 1);
    }
    std::vector<bool> d(n, false);
    const double boot = Uniform(rng, -1, 1);
    const GaeResult mc = ComputeGae(rw, v, d, boot, 0.97, 1.0);
    const GaeResult td = ComputeGae(rw, v, d, boot, 0.97, 0.0);
    for (int t = 0; t < n; ++t) {
      double ret = 0.0, discount = 1.0;
      for (int s = t; s < n; ++s) {
        ret += discount * rw[s];
        discount *= 0.97;
      }
      ret += discount * boot;
      CHECK(mc.advantages(t) == doctest::Approx(ret - v[t]));
      const double next = t + 1 < n ? v[t + 1] : boot;
      CHECK(td.advantages(t) == doctest::Approx(rw[t] + 0.97 * next - v[t]));
    }
  }
}

std::vector<PpoSample> RolloutSamples(const PpoLearner& learner, Rng& rng, int n) {
  std::vector<PpoSample> samples;
  for (int k = 0; k < n; ++k) {
    PpoSample s;
    s.observation = RandomMatrix(rng, kObs, 1).col(0);
    s.representation = RandomMatrix(rng, kRep, 1).col(0);
    const PpoActResult act = learner.Act(s.observation, s.representation, rng, false);
    s.pre_squash = act.pre_squash;
    s.log_prob = act.log_prob;
    s.advantage = Uniform(rng, -1, 1);
    s.value_target = Uniform(rng, -1, 1);
    samples.push_back(s);
  }
  return samples;
}

std::vector<const PpoSample*> Pointers(const std::vector<PpoSample>& samples) {
  std::vector<const PpoSample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  return ptrs;
}

TEST_CASE("PPO objective") {
  Rng rng(10);
  auto make = [](double clip) {
    PpoConfig config;
    config.clip = clip;
    return std::make_unique<PpoLearner>(Network(kObs, KeepPolicyLayers(2), 3, {kRep, 0}),
                                        Network(kObs, KeepPolicyLayers(1), 4, {kRep, 0}),
                                        config);
  };
  auto learner = make(0.2);
  auto samples = RolloutSamples(*learner, rng, 12);
  const auto batch = Pointers(samples);
  const PpoLosses start = learner->Loss(batch);
  CHECK(start.mean_ratio == doctest::Approx(1.0).epsilon(1e-12));

  // Zero advantages leave only the value and entropy terms.
  std::vector<PpoSample> flat = samples;
  for (auto& s : flat) s.advantage = 0.0;
  CHECK(learner->Loss(Pointers(flat)).policy == 0.0);

  // At ratio 1 the clipped and unclipped estimators share their gradient.
  auto unclipped = make(1e9);
  learner->ZeroGrad();
  unclipped->ZeroGrad();
  learner->LossAndGradient(batch);
  unclipped->LossAndGradient(batch);
  const auto a = learner->Parameters();
  const auto b = unclipped->Parameters();
  for (size_t k = 0; k < a.size(); ++k) CHECK(a[k]->grad == b[k]->grad);

  // Perturb the policy so ratios leave the clip band, then check gradients.
  for (nn::Parameter* p : learner->Parameters()) {
    p->value += 0.3 * RandomMatrix(rng, p->value.rows(), p->value.cols());
  }
  const double error = testing::MaxParameterGradientError(
      learner->Parameters(), [&]() { return learner->Loss(batch).total; },
      [&]() { learner->LossAndGradient(batch); });
  CHECK(error < 1e-4);

  learner->ZeroGrad();
  const PpoGradient g = learner->LossAndGradient(batch);
  Eigen::MatrixXd reps(kRep, batch.size());
  for (size_t k = 0; k < batch.size(); ++k) reps.col(k) = batch[k]->representation;
  const auto numeric = testing::NumericGradient(
      reps, [&]() { return learner->Loss(batch, &reps).total; });
  CHECK(testing::RelativeError(g.representation_grad, numeric) < 1e-6);
}

TEST_CASE("PPO update is reproducible and moves the policy") {
  auto run = []() {
    Rng rng(11);
    PpoConfig config;
    config.minibatch_size = 16;
    config.minibatches_per_update = 5;
    PpoLearner learner(Network(kObs, KeepPolicyLayers(2), 5, {kRep, 0}),
                       Network(kObs, KeepPolicyLayers(1), 6, {kRep, 0}), config);
    const uint64_t before = nn::ParameterHash(learner.policy());
    const PpoLosses losses = learner.Update(RolloutSamples(learner, rng, 40), rng);
    CHECK(nn::ParameterHash(learner.policy()) != before);
    return std::make_pair(losses.total, nn::ParameterHash(learner.policy()));
  };
  CHECK(run() == run());
}

}  // namespace
}  // namespace rl
}  // namespace mprlab
