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

#include "checks.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <sstream>
#include <vector>

#include "gradcheck.h"
#include "mprlab/common.h"
#include "mprlab/distmath.h"
#include "mprlab/encoder.h"
#include "mprlab/envs.h"
#include "mprlab/nn.h"

namespace mprlab {
namespace checks {
namespace {

using Clock = std::chrono::steady_clock;

double Seconds(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

Eigen::MatrixXd RandomMatrix(Rng& rng, int rows, int cols) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = StandardNormal(rng);
  return m;
}

distmath::FrequencyTable RandomTable(Rng& rng) {
  const int ego = 2 + UniformInt(rng, 5);
  const int opp = 2 + UniformInt(rng, 5);
  std::vector<int64_t> counts(static_cast<size_t>(ego) * opp);
  for (auto& c : counts) c = UniformInt(rng, 3) == 0 ? 0 : UniformInt(rng, 50);
  counts[UniformInt(rng, ego * opp)] += 1;
  return distmath::FrequencyTable({ego, opp}, counts, Uniform(rng, 0.1, 2.0));
}

distmath::SampleSet RandomSet(Rng& rng, int n, int dim, double scale) {
  distmath::SampleSet s;
  s.points = RandomMatrix(rng, n, dim) * scale;
  return s;
}

// Loss = sum(weights .* output) for fixed random weights.
double ProbeGradientError(nn::Network& net, const Eigen::MatrixXd& x, int batch,
                          const Eigen::MatrixXd* side, Rng& rng) {
  const Eigen::MatrixXd weights = RandomMatrix(rng, net.output_dim(),
                                               static_cast<int>(x.cols()));
  auto loss = [&]() {
    return (weights.array() * net.Infer(x, batch, side).array()).sum();
  };
  auto analytic = [&]() {
    net.Forward(x, batch, side);
    net.Backward(weights);
  };
  return testing::MaxParameterGradientError(net.Parameters(), loss, analytic);
}

encoder::HistoryPtr RandomHistory(Rng& rng, int dim, int steps, int label,
                                  int64_t id) {
  auto h = std::make_shared<encoder::ObservationHistory>();
  h->observations = RandomMatrix(rng, dim, steps);
  h->opponent_actions.resize(1, steps);
  for (int t = 0; t < steps; ++t) h->opponent_actions(0, t) = UniformInt(rng, 5);
  h->label = label;
  h->episode_id = id;
  return h;
}

}  // namespace

SuiteResult MetricPropertySuite(int instances, uint64_t seed) {
  const auto start = Clock::now();
  Rng rng(seed);
  int violations = 0;
  double worst_asymmetry = 0.0;
  double worst_self = 0.0;
  double min_distinct = std::numeric_limits<double>::infinity();
  for (int i = 0; i < instances; ++i) {
    distmath::FrequencyTable p = RandomTable(rng);
    std::vector<int64_t> counts = p.counts();
    for (auto& c : counts) c = UniformInt(rng, 50);
    counts[0] += 1;
    distmath::FrequencyTable q(p.dims(), counts, p.smoothing());
    const double pq = distmath::SymmetricKl(p, q);
    const double qp = distmath::SymmetricKl(q, p);
    const double pp = distmath::SymmetricKl(p, p);
    worst_asymmetry = std::max(worst_asymmetry, std::abs(pq - qp));
    worst_self = std::max(worst_self, std::abs(pp));
    if (pq < -kMetricSlack || std::abs(pq - qp) > kMetricSlack ||
        std::abs(pp) > kMetricSlack) {
      ++violations;
    }
    // Distinct distributions must be strictly separated.
    const auto pv = p.Probabilities();
    const auto qv = q.Probabilities();
    double diff = 0.0;
    for (size_t k = 0; k < pv.size(); ++k) diff = std::max(diff, std::abs(pv[k] - qv[k]));
    if (diff > 1e-12) {
      min_distinct = std::min(min_distinct, pq);
      if (!(pq > 0.0)) ++violations;
    }
  }
  for (int i = 0; i < instances; ++i) {
    const int dim = 1 + UniformInt(rng, 5);
    distmath::SampleSet x = RandomSet(rng, 5 + UniformInt(rng, 40), dim, 1.0);
    distmath::SampleSet y = RandomSet(rng, 5 + UniformInt(rng, 40), dim,
                                      Uniform(rng, 0.5, 2.0));
    const auto proj = distmath::MakeProjections(dim, 20 + UniformInt(rng, 80),
                                                DeriveSeed(seed, i));
    const double xy = distmath::SlicedWasserstein(x, y, proj);
    const double yx = distmath::SlicedWasserstein(y, x, proj);
    // The same sample set in a different row order is the same distribution.
    distmath::SampleSet shuffled = x;
    for (int r = shuffled.size() - 1; r > 0; --r) {
      shuffled.points.row(r).swap(shuffled.points.row(UniformInt(rng, r + 1)));
    }
    const double xx = distmath::SlicedWasserstein(x, shuffled, proj);
    worst_asymmetry = std::max(worst_asymmetry, std::abs(xy - yx));
    worst_self = std::max(worst_self, std::abs(xx));
    if (xy < -kMetricSlack || std::abs(xy - yx) > kMetricSlack ||
        std::abs(xx) > kMetricSlack || !(xy > 0.0)) {
      ++violations;
    }
    min_distinct = std::min(min_distinct, xy);
  }
  SuiteResult result;
  result.pass = violations == 0;
  std::ostringstream detail;
  detail << 2 * instances << " instances, " << violations
         << " violations, max asymmetry " << worst_asymmetry << ", max self "
         << worst_self << ", min distinct " << min_distinct;
  result.detail = detail.str();
  result.seconds = Seconds(start);
  return result;
}

SuiteResult SlicedWassersteinOracleSuite(int one_d_instances, int projections,
                                         int points, double relative_tolerance,
                                         uint64_t seed) {
  const auto start = Clock::now();
  Rng rng(seed);
  double worst_1d = 0.0;
  for (int i = 0; i < one_d_instances; ++i) {
    distmath::SampleSet x = RandomSet(rng, 3 + UniformInt(rng, 60), 1, 1.0);
    distmath::SampleSet y = RandomSet(rng, 3 + UniformInt(rng, 60), 1, 2.0);
    y.points.array() += Uniform(rng, -2.0, 2.0);
    std::vector<double> vx(x.points.data(), x.points.data() + x.size());
    std::vector<double> vy(y.points.data(), y.points.data() + y.size());
    const double exact = distmath::Wasserstein1d(vx, vy);
    // Every 1-D direction is +1 or -1, and both give the exact distance.
    const auto proj = distmath::MakeProjections(1, 1 + UniformInt(rng, 10),
                                                DeriveSeed(seed, i));
    worst_1d = std::max(worst_1d,
                        std::abs(distmath::SlicedWasserstein(x, y, proj) - exact));
  }
  // Independent Gaussian clouds in 2-D, the second shifted by a unit vector
  // in a random direction: the limit is E|<theta, s>| = 2/pi.
  const double angle = Uniform(rng, 0.0, 2.0 * std::numbers::pi);
  distmath::SampleSet x = RandomSet(rng, points, 2, 1.0);
  distmath::SampleSet y = RandomSet(rng, points, 2, 1.0);
  y.points.col(0).array() += std::cos(angle);
  y.points.col(1).array() += std::sin(angle);
  const double sw = distmath::SlicedWasserstein(
      x, y, distmath::MakeProjections(2, projections, DeriveSeed(seed, 1u << 20)));
  const double target = 2.0 / std::numbers::pi;
  const double relative = std::abs(sw - target) / target;
  SuiteResult result;
  result.pass = worst_1d <= 1e-12 && relative <= relative_tolerance;
  std::ostringstream detail;
  detail << "1-D max |SW - W1| " << worst_1d << " over " << one_d_instances
         << " instances; Gaussian shift SW " << sw << " vs 2/pi " << target
         << " (relative error " << relative << ")";
  result.detail = detail.str();
  result.seconds = Seconds(start);
  return result;
}

SuiteResult GradientCheckSuite(uint64_t seed) {
  using nn::Activation;
  using nn::LayerSpec;
  using nn::Network;
  const auto start = Clock::now();
  Rng rng(seed);
  std::vector<std::pair<std::string, double>> errors;
  auto add = [&](const std::string& name, double error) {
    errors.emplace_back(name, error);
  };
  for (Activation a : {Activation::kIdentity, Activation::kRelu, Activation::kTanh}) {
    Network net(5, {LayerSpec::Dense(7, a), LayerSpec::Dense(3, a)},
                DeriveSeed(seed, 1 + static_cast<int>(a)));
    add("dense", ProbeGradientError(net, RandomMatrix(rng, 5, 4), 4, nullptr, rng));
  }
  for (int steps : {1, 3, 6}) {
    Network lstm(3, {LayerSpec::Lstm(5), LayerSpec::Lstm(4),
                     LayerSpec::Dense(2, Activation::kIdentity)},
                 DeriveSeed(seed, 10 + steps));
    add("lstm", ProbeGradientError(lstm, RandomMatrix(rng, 3, 2 * steps), 2,
                                   nullptr, rng));
    Network gru(3, {LayerSpec::Gru(5), LayerSpec::Dense(4, Activation::kTanh)},
                DeriveSeed(seed, 20 + steps));
    add("gru", ProbeGradientError(gru, RandomMatrix(rng, 3, 3 * steps), 3,
                                  nullptr, rng));
  }
  {
    Network net(4, {LayerSpec::Dense(6, Activation::kTanh),
                    LayerSpec::Dense(5, Activation::kRelu),
                    LayerSpec::Dense(2, Activation::kIdentity)},
                DeriveSeed(seed, 30), nn::SideInput{3, 0});
    const Eigen::MatrixXd side = RandomMatrix(rng, 3, 5);
    add("side input", ProbeGradientError(net, RandomMatrix(rng, 4, 5), 5, &side, rng));
  }
  auto small_encoder = [&](uint64_t s) {
    return encoder::MakeEncoder(
        3, {LayerSpec::Gru(6),
            LayerSpec::Dense(encoder::kRepresentationDim, Activation::kTanh)},
        s);
  };
  {
    Network net = small_encoder(DeriveSeed(seed, 40));
    encoder::EmbedBatch batch;
    for (int k = 0; k < 4; ++k) {
      batch.push_back({RandomHistory(rng, 3, 4, 0, 2 * k),
                       RandomHistory(rng, 3, 4, 1, 2 * k + 1),
                       Uniform(rng, 0.5, 2.0)});
    }
    add("embedding loss",
        testing::MaxParameterGradientError(
            net.Parameters(), [&]() { return encoder::EmbedLoss(batch, net); },
            [&]() { encoder::EmbedLossAndGradient(batch, net); }));
  }
  {
    const encoder::ActionPredictor predictor{encoder::ActionHead::kCategorical, 5};
    Network net = small_encoder(DeriveSeed(seed, 41));
    Network head = encoder::MakePredictionHead(predictor, DeriveSeed(seed, 42));
    std::vector<encoder::HistoryPtr> owned;
    std::vector<const encoder::ObservationHistory*> batch;
    for (int k = 0; k < 3; ++k) {
      owned.push_back(RandomHistory(rng, 3, 4, 0, k));
      batch.push_back(owned.back().get());
    }
    auto params = net.Parameters();
    for (auto* p : head.Parameters()) params.push_back(p);
    add("action-prediction cross-entropy",
        testing::MaxParameterGradientError(
            params,
            [&]() { return encoder::ActionPredictionLoss(batch, predictor, net, head); },
            [&]() {
              encoder::ActionPredictionLossAndGradient(batch, predictor, net, head);
            }));
  }
  SuiteResult result;
  result.pass = true;
  double worst = 0.0;
  std::string worst_name;
  for (const auto& [name, error] : errors) {
    if (!(error < kGradientTolerance)) result.pass = false;
    if (!(error <= worst)) {
      worst = error;
      worst_name = name;
    }
  }
  std::ostringstream detail;
  detail << errors.size() << " checks, worst relative error " << worst << " ("
         << worst_name << ")";
  result.detail = detail.str();
  result.seconds = Seconds(start);
  return result;
}

SuiteResult EnvironmentDeterminismSuite(int episodes, uint64_t seed) {
  const auto start = Clock::now();
  int mismatches = 0;
  envs::EnvConfig config;
  for (envs::EnvId id : {envs::EnvId::kPush, envs::EnvId::kKeep}) {
    for (int e = 0; e < episodes; ++e) {
      const uint64_t episode_seed = DeriveSeed(seed, e);
      auto run = [&]() {
        Rng rng(DeriveSeed(episode_seed, 1));
        auto opponent =
            envs::SampleOpponentPolicy(envs::PolicySet::kTraining, id, config, rng);
        auto env = envs::MakeEnvironment(id, config);
        std::vector<double> trace;
        Eigen::VectorXd obs = env->Reset(episode_seed, opponent);
        trace.insert(trace.end(), obs.data(), obs.data() + obs.size());
        while (!env->done()) {
          distmath::ActionValue action;
          if (id == envs::EnvId::kPush) {
            action = UniformInt(rng, envs::kPushNumActions);
          } else {
            action = std::vector<double>{Uniform(rng, -1.0, 1.0), Uniform(rng, -1.0, 1.0)};
          }
          envs::StepRecord record = env->Step(action);
          trace.push_back(record.reward);
          obs = env->Observation();
          trace.insert(trace.end(), obs.data(), obs.data() + obs.size());
        }
        return trace;
      };
      if (run() != run()) ++mismatches;
    }
  }
  SuiteResult result;
  result.pass = mismatches == 0;
  result.detail = std::to_string(2 * episodes) + " episode pairs, " +
                  std::to_string(mismatches) + " mismatches";
  result.seconds = Seconds(start);
  return result;
}

SuiteResult SyntheticRecoverySuite(uint64_t seed) {
  const auto start = Clock::now();
  Rng rng(seed);
  constexpr int kLabels = 4;
  constexpr int kPerLabel = 6;
  constexpr int kSteps = 10;
  // Target geometry: Euclidean distances between four points in 3-D, so it
  // is exactly realizable in the 32-D representation space.
  Eigen::Matrix<double, kLabels, 3> anchors;
  anchors << 0.0, 0.0, 0.0,  //
      1.0, 0.0, 0.0,         //
      0.2, 1.2, 0.0,         //
      0.5, 0.4, 0.8;
  distmath::PolicyDistanceMatrix targets;
  targets.labels = {"p0", "p1", "p2", "p3"};
  targets.values.resize(kLabels, kLabels);
  for (int i = 0; i < kLabels; ++i) {
    for (int j = 0; j < kLabels; ++j) {
      targets.values(i, j) = (anchors.row(i) - anchors.row(j)).norm();
    }
  }

  // Each synthetic policy emits a sinusoid with its own frequency and
  // offset, plus a little observation noise.
  std::vector<encoder::HistoryPtr> histories;
  for (int label = 0; label < kLabels; ++label) {
    for (int k = 0; k < kPerLabel; ++k) {
      auto h = std::make_shared<encoder::ObservationHistory>();
      h->observations.resize(3, kSteps);
      for (int t = 0; t < kSteps; ++t) {
        const double phase = 0.4 * (label + 1) * t;
        h->observations(0, t) = std::sin(phase) + 0.02 * StandardNormal(rng);
        h->observations(1, t) = std::cos(phase) + 0.02 * StandardNormal(rng);
        h->observations(2, t) = 0.5 * label - 0.75 + 0.02 * StandardNormal(rng);
      }
      h->label = label;
      h->episode_id = static_cast<int64_t>(histories.size());
      histories.push_back(h);
    }
  }
  encoder::EmbedBatch all_pairs;
  for (size_t i = 0; i < histories.size(); ++i) {
    for (size_t j = i + 1; j < histories.size(); ++j) {
      all_pairs.push_back({histories[i], histories[j],
                           targets.values(histories[i]->label, histories[j]->label)});
    }
  }

  nn::Network net = encoder::MakeEncoder(3, encoder::KeepEncoderLayers(), seed);
  nn::Adam adam(net.Parameters(), {.learning_rate = 3e-3});
  constexpr int kMaxSteps = 6000;
  int steps = 0;
  double loss = encoder::EmbedLoss(all_pairs, net);
  while (loss >= 1e-4 && steps < kMaxSteps) {
    net.ZeroGrad();
    encoder::EmbedLossAndGradient(
        encoder::SampleEmbedBatch(histories, targets, 64, rng), net);
    adam.Step();
    if (++steps % 50 == 0) loss = encoder::EmbedLoss(all_pairs, net);
  }
  loss = encoder::EmbedLoss(all_pairs, net);

  double worst = 0.0;
  for (const encoder::EmbedPair& pair : all_pairs) {
    if (pair.target == 0.0) continue;
    const double d =
        (encoder::Encode(net, *pair.first) - encoder::Encode(net, *pair.second)).norm();
    worst = std::max(worst, std::abs(d - pair.target) / pair.target);
  }
  SuiteResult result;
  result.pass = loss < 1e-3 && worst <= 0.05;
  std::ostringstream detail;
  detail << "embed loss " << FormatDouble(loss) << " after " << steps
         << " updates, worst relative distance error " << FormatDouble(worst);
  result.detail = detail.str();
  result.seconds = Seconds(start);
  return result;
}

}  // namespace checks
}  // namespace mprlab
