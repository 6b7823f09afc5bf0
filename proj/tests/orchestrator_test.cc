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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <unistd.h>

#include "doctest.h"
#include "mprlab/plot.h"

namespace mprlab {
namespace orchestrator {
namespace {

namespace fs = std::filesystem;

// A Push run small enough for unit tests: 30 one-episode iterations.
ExperimentConfig TinyPush(EncoderMode mode) {
  ExperimentConfig c = DefaultConfig(envs::EnvId::kPush);
  c.mode = mode;
  c.iterations = 30;
  c.num_sample = 5;
  c.learning_starts = 100;
  c.rl_updates_per_iteration = 2;
  c.test_interval_steps = 500;
  c.test_episodes = 2;
  c.moving_average_window = 2;
  c.export_episodes = 1;
  c.checkpoints = false;
  c.dqn.batch_size = 8;
  c.encoder.batch_size = 4;
  return c;
}

// Two Keep iterations with tiny collections and minibatches.
ExperimentConfig TinyKeep(EncoderMode mode) {
  ExperimentConfig c = DefaultConfig(envs::EnvId::kKeep);
  c.mode = mode;
  c.iterations = 2;
  c.num_sample = 3;
  c.num_collect = 4;
  c.encoder_updates_per_iteration = 2;
  c.test_episodes = 2;
  c.export_episodes = 1;
  c.checkpoints = false;
  c.ppo.minibatch_size = 64;
  c.ppo.minibatches_per_update = 2;
  c.encoder.batch_size = 4;
  return c;
}

std::string MetricsText(const std::vector<MetricsRow>& rows) {
  std::ostringstream out;
  WriteMetricsCsv(rows, out);
  return out.str();
}

fs::path ScratchDir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() /
                 ("mprlab_orch_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  return dir;
}

TEST_CASE("stream seeds are distinct per stream and per master seed") {
  std::set<uint64_t> seen;
  for (uint64_t master : {0ull, 1ull, 2ull}) {
    for (int s = 1; s <= 8; ++s) {
      seen.insert(StreamSeed(master, static_cast<SeedStream>(s)));
    }
  }
  CHECK(seen.size() == 24);
}

TEST_CASE("sampled distributions hold num_sample episodes per policy") {
  const envs::EnvConfig env_config;
  const auto policies = envs::TrainingPolicies(envs::EnvId::kPush);
  const int horizon = env_config.push.horizon;
  DistributionStore store = SampleDistributions(
      envs::EnvId::kPush, env_config, policies, 7,
      UniformRandomEgo(envs::EnvId::kPush, env_config), 11, 1.0, 1);
  REQUIRE(store.size() == static_cast<int>(policies.size()));
  for (int i = 0; i < store.size(); ++i) {
    const auto& table = std::get<distmath::FrequencyTable>(store.distributions[i]);
    CHECK(table.total() == 7 * horizon);
    CHECK(store.labels[i] == envs::PolicyName(policies[i]));
  }

  DistributionStore keep = SampleDistributions(
      envs::EnvId::kKeep, env_config, envs::TrainingPolicies(envs::EnvId::kKeep),
      3, UniformRandomEgo(envs::EnvId::kKeep, env_config), 11, 1.0, 1);
  for (const auto& d : keep.distributions) {
    const auto& set = std::get<distmath::SampleSet>(d);
    CHECK(set.size() == 3 * env_config.keep.horizon);
    CHECK(set.dimension() == 4);
  }
}

TEST_CASE("sampling and distances do not depend on the worker count") {
  const envs::EnvConfig env_config;
  const auto policies = envs::TrainingPolicies(envs::EnvId::kKeep);
  auto run = [&](int workers) {
    DistributionStore store = SampleDistributions(
        envs::EnvId::kKeep, env_config, policies, 4,
        UniformRandomEgo(envs::EnvId::kKeep, env_config), 5, 1.0, workers);
    return ComputeDistances(store, DistanceConfig{}, 9, workers).values;
  };
  const Eigen::MatrixXd one = run(1);
  const Eigen::MatrixXd three = run(3);
  CHECK(one == three);
  CHECK(one.isApprox(one.transpose()));
}

TEST_CASE("the same policy sampled twice is close under KL") {
  const envs::EnvConfig env_config;
  const envs::OpponentPolicy policy = envs::PushDefenderPolicy{0.5};
  DistributionStore store = SampleDistributions(
      envs::EnvId::kPush, env_config, {policy, policy}, 200,
      UniformRandomEgo(envs::EnvId::kPush, env_config), 3, 1.0, 1);
  const auto d = ComputeDistances(store, DistanceConfig{}, 1, 1);
  CHECK(d.values(0, 1) < 0.05);
  CHECK(d.values(0, 1) > 0.0);  // independent episodes still differ a little
}

TEST_CASE("heatmaps are normalized frequencies and need a discrete store") {
  const envs::EnvConfig env_config;
  DistributionStore store = SampleDistributions(
      envs::EnvId::kPush, env_config, envs::TrainingPolicies(envs::EnvId::kPush),
      4, UniformRandomEgo(envs::EnvId::kPush, env_config), 8, 1.0, 1);
  const Eigen::MatrixXd h = HeatmapMatrix(store, 0);
  CHECK(h.rows() == 5);
  CHECK(h.cols() == 5);
  CHECK(h.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(h.minCoeff() >= 0.0);

  std::ostringstream csv;
  WriteHeatmapCsv(h, csv);
  CHECK(csv.str().rfind("ego_action,opp_0,opp_1,opp_2,opp_3,opp_4\n", 0) == 0);

  DistributionStore keep = SampleDistributions(
      envs::EnvId::kKeep, env_config, envs::TrainingPolicies(envs::EnvId::kKeep),
      1, UniformRandomEgo(envs::EnvId::kKeep, env_config), 8, 1.0, 1);
  CHECK_THROWS_AS(HeatmapMatrix(keep, 0), Error);
}

TEST_CASE("a uniform random ego gives near-uniform ego marginals") {
  const envs::EnvConfig env_config;
  DistributionStore store = SampleDistributions(
      envs::EnvId::kPush, env_config, {envs::PushDefenderPolicy{0.5}}, 200,
      UniformRandomEgo(envs::EnvId::kPush, env_config), 21, 1.0, 1);
  const Eigen::VectorXd ego = HeatmapMatrix(store, 0).rowwise().sum();
  for (int a = 0; a < ego.size(); ++a) CHECK(std::abs(ego(a) - 0.2) < 0.02);
}

TEST_CASE("mode none builds no encoder and mpr builds a 32-d one") {
  Agent none(TinyPush(EncoderMode::kNone));
  CHECK(!none.has_encoder());
  CHECK(!none.has_prediction_head());
  Agent mpr(TinyPush(EncoderMode::kMprNoRs));
  CHECK(mpr.has_encoder());
  CHECK(mpr.encoder().output_dim() == 32);
  Agent actpred(TinyKeep(EncoderMode::kActPred));
  CHECK(actpred.has_prediction_head());
}

TEST_CASE("training is reproducible and independent of the worker count") {
  ExperimentConfig config = TinyPush(EncoderMode::kMprRs);
  config.resample_period = 7;
  TrainResult a = Train(config);
  config.workers = 3;
  TrainResult b = Train(config);
  REQUIRE(!a.metrics.empty());
  CHECK(MetricsText(a.metrics) == MetricsText(b.metrics));
  CHECK(a.environment_steps == 30 * 50);
  CHECK(a.metrics.size() == 3);  // tests at 500, 1000 and 1500 steps
  CHECK(a.distance_rebuilds == 30 / 7);
  REQUIRE(a.distances.has_value());
  REQUIRE(a.initial_distances.has_value());
  // The final distances come from a re-sampling with the learned ego.
  CHECK(!(a.distances->values == a.initial_distances->values));
}

TEST_CASE("replay refresh changes DQN training and stays reproducible") {
  ExperimentConfig config = TinyPush(EncoderMode::kMprNoRs);
  config.replay_refresh_period = 0;
  const std::string plain = MetricsText(Train(config).metrics);
  config.replay_refresh_period = 5;
  const std::string refreshed = MetricsText(Train(config).metrics);
  CHECK(refreshed != plain);
  CHECK(MetricsText(Train(config).metrics) == refreshed);
  // Without an encoder there is nothing to refresh.
  ExperimentConfig none = TinyPush(EncoderMode::kNone);
  none.replay_refresh_period = 0;
  const std::string none_plain = MetricsText(Train(none).metrics);
  none.replay_refresh_period = 5;
  CHECK(MetricsText(Train(none).metrics) == none_plain);
}

TEST_CASE("only mpr-rs re-samples") {
  TrainResult nors = Train(TinyPush(EncoderMode::kMprNoRs));
  CHECK(nors.distance_rebuilds == 0);
  CHECK(nors.distances->values == nors.initial_distances->values);

  ExperimentConfig rs = TinyPush(EncoderMode::kMprRs);
  TrainResult rs_result = Train(rs);  // default period max(1, 30 / 10) = 3
  CHECK(rs_result.distance_rebuilds == 10);

  TrainResult none = Train(TinyPush(EncoderMode::kNone));
  CHECK(none.distance_rebuilds == 0);
  CHECK(!none.distances.has_value());
  CHECK(none.initial_store.has_value());  // kept for the artifacts
}

TEST_CASE("every encoder mode trains on Keep with finite losses") {
  for (EncoderMode mode : {EncoderMode::kNone, EncoderMode::kMprNoRs,
                           EncoderMode::kMprRs, EncoderMode::kTriplet,
                           EncoderMode::kActPred}) {
    CAPTURE(EncoderModeName(mode));
    TrainResult r = Train(TinyKeep(mode));
    REQUIRE(r.metrics.size() == 2);
    for (const MetricsRow& row : r.metrics) {
      CHECK(std::isfinite(row.test_reward));
      CHECK(std::isfinite(row.rl_loss));
      CHECK(std::isfinite(row.encoder_loss));
      if (mode == EncoderMode::kNone) CHECK(row.encoder_loss == 0.0);
    }
    CHECK(r.environment_steps == 2 * 4 * 100);
  }
}

TEST_CASE("every encoder mode trains on Push") {
  for (EncoderMode mode : {EncoderMode::kTriplet, EncoderMode::kActPred}) {
    CAPTURE(EncoderModeName(mode));
    TrainResult r = Train(TinyPush(mode));
    REQUIRE(!r.metrics.empty());
    CHECK(std::isfinite(r.metrics.back().encoder_loss));
  }
}

TEST_CASE("evaluation is deterministic per seed and reports test opponents") {
  Agent agent(TinyKeep(EncoderMode::kMprNoRs));
  EvalResult a = Evaluate(agent, 4, 17, 1);
  EvalResult b = Evaluate(agent, 4, 17, 2);
  EvalResult c = Evaluate(agent, 4, 18, 1);
  CHECK(a.episode_rewards == b.episode_rewards);
  CHECK(a.opponent_labels == b.opponent_labels);
  CHECK(a.episode_rewards != c.episode_rewards);
  CHECK(a.episode_rewards.size() == 4);
  double sum = 0.0;
  for (double r : a.episode_rewards) sum += r;
  CHECK(a.mean_reward == doctest::Approx(sum / 4));
}

TEST_CASE("trailing mean covers the last window values") {
  CHECK(TrailingMean({1.0, 2.0, 3.0, 4.0}, 2) == 3.5);
  CHECK(TrailingMean({1.0, 2.0}, 5) == 1.5);
}

TEST_CASE("metrics round-trip through CSV") {
  std::vector<MetricsRow> rows = {
      {.step = 100, .iteration = 2, .train_reward = -1.5, .test_reward = 0.1 + 0.2,
       .test_reward_ma = -3.25, .rl_loss = 1e-7, .encoder_loss = 2.0, .epsilon = 0.5}};
  std::istringstream in(MetricsText(rows));
  const std::vector<MetricsRow> back = ReadMetricsCsv(in);
  CHECK(MetricsText(back) == MetricsText(rows));
  CHECK(back[0].test_reward == 0.1 + 0.2);
  CHECK(MetricsText(rows).rfind(
            "step,iteration,train_reward,test_reward,test_reward_ma,rl_loss,"
            "encoder_loss,epsilon\n",
            0) == 0);
}

TEST_CASE("run aggregation gives mean and population spread") {
  std::vector<MetricsRow> a = {{.step = 10, .test_reward_ma = 1.0},
                               {.step = 20, .test_reward_ma = 2.0}};
  std::vector<MetricsRow> b = {{.step = 10, .test_reward_ma = 3.0},
                               {.step = 20, .test_reward_ma = 2.0}};
  CurveStats stats = AggregateRuns({a, b});
  REQUIRE(stats.mean.size() == 2);
  CHECK(stats.steps[0] == 10);
  CHECK(stats.mean[0] == 2.0);
  CHECK(stats.mean[1] == 2.0);
  CHECK(stats.stddev[1] == 0.0);
  CHECK(stats.stddev[0] > 0.0);
}

std::vector<encoder::RepresentationRow> LineRows() {
  std::vector<encoder::RepresentationRow> rows;
  for (int i = 0; i < 6; ++i) {
    encoder::RepresentationRow row;
    row.episode_id = i / 3;
    row.label = i < 3 ? "left" : "right";
    row.t = i % 3;
    row.values = Eigen::VectorXd::Zero(4);
    row.values(0) = i;
    row.values(1) = 2.0 * i;
    rows.push_back(row);
  }
  return rows;
}

TEST_CASE("MDS of collinear representations preserves distances") {
  const auto rows = LineRows();
  MdsExport mds = ComputeMds(rows, MdsMode::kPerStep, 0);
  REQUIRE(mds.points.size() == 6);
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 6; ++j) {
      const double want = (rows[i].values - rows[j].values).norm();
      const double got = (mds.points[i].position - mds.points[j].position).norm();
      CHECK(got == doctest::Approx(want).epsilon(1e-9));
    }
  }
  CHECK(!mds.mds.warning);

  MdsExport tail = ComputeMds(rows, MdsMode::kPerStep, 2);
  CHECK(tail.points.size() == 4);  // each episode's last two steps
  for (const MdsPoint& p : tail.points) CHECK(p.t >= 1);
  CHECK_THROWS_AS(ComputeMds(rows, MdsMode::kPerStep, 1), Error);
  CHECK_THROWS_AS(ComputeMds(rows, MdsMode::kEpisodeMean, 0), Error);
  CHECK_THROWS_AS(ComputeMds({rows[0], rows[1]}, MdsMode::kPerStep, 0), Error);

  std::ostringstream csv;
  WriteMdsCsv(mds, csv);
  CHECK(csv.str().rfind("label,episode_id,t,x,y\n", 0) == 0);
}

TEST_CASE("episode-mean MDS gives one point per episode") {
  auto rows = LineRows();
  for (auto row : LineRows()) {
    row.episode_id += 2;
    row.values(2) = 1.0;
    rows.push_back(row);
  }
  MdsExport mds = ComputeMds(rows, MdsMode::kEpisodeMean, 0);
  CHECK(mds.points.size() == 4);
  for (const MdsPoint& p : mds.points) CHECK(p.t == -1);
}

TEST_CASE("label centroids average per label in first-seen order") {
  const auto centroids = LabelCentroids(LineRows());
  REQUIRE(centroids.size() == 2);
  CHECK(centroids[0].first == "left");
  CHECK(centroids[0].second(0) == doctest::Approx(1.0));
  CHECK(centroids[1].second(1) == doctest::Approx(8.0));
}

TEST_CASE("the scatter legend lists exactly the labels present") {
  std::vector<plot::ScatterPoint> points = {
      {0.0, 0.0, "a"}, {1.0, 1.0, "b"}, {2.0, 0.5, "a"}};
  std::ostringstream svg;
  plot::WriteScatterSvg(points, "t", svg);
  const std::string text = svg.str();
  int legends = 0;
  for (size_t pos = text.find("class=\"legend\""); pos != std::string::npos;
       pos = text.find("class=\"legend\"", pos + 1)) {
    ++legends;
  }
  CHECK(legends == 2);
  CHECK(text.find(">a<") != std::string::npos);
  CHECK(text.find(">b<") != std::string::npos);
}

TEST_CASE("representations cover every training and export policy") {
  Agent agent(TinyKeep(EncoderMode::kMprNoRs));
  const auto rows = CollectRepresentations(agent, 2, 4, 1);
  auto policies = envs::TrainingPolicies(envs::EnvId::kKeep);
  for (const auto& p : ExportTestPolicies(envs::EnvId::kKeep)) policies.push_back(p);
  CHECK(rows.size() == policies.size() * 2 * 100);
  std::set<std::string> labels;
  std::set<int64_t> episodes;
  for (const auto& row : rows) {
    labels.insert(row.label);
    episodes.insert(row.episode_id);
    CHECK(row.values.size() == 32);
  }
  CHECK(labels.size() == policies.size());
  CHECK(episodes.size() == policies.size() * 2);
  CHECK(CollectRepresentations(agent, 2, 4, 3).size() == rows.size());
}

TEST_CASE("directories are written atomically") {
  const fs::path dir = ScratchDir("atomic");
  CHECK_THROWS(WriteDirectoryAtomically(dir, [](const fs::path& tmp) {
    std::ofstream(tmp / "partial.txt") << "x";
    Fail("interrupted");
  }));
  CHECK(!fs::exists(dir));
  for (const auto& entry : fs::directory_iterator(dir.parent_path())) {
    const std::string name = entry.path().filename().string();
    const bool leftover = name.find(".tmp-") != std::string::npos &&
                          name.find(dir.filename().string()) != std::string::npos;
    CHECK(!leftover);
  }

  WriteDirectoryAtomically(dir, [](const fs::path& tmp) {
    std::ofstream(tmp / "done.txt") << "ok";
  });
  CHECK(fs::exists(dir / "done.txt"));
  CHECK_THROWS_AS(WriteDirectoryAtomically(dir, [](const fs::path&) {}), Error);
  fs::remove_all(dir);
}

TEST_CASE("label file names are filesystem safe") {
  CHECK(LabelFileName("angle=-45:dist=1/force 0.5") == "angle_-45_dist_1_force_0.5");
}

TEST_CASE("run artifacts include every documented file") {
  ExperimentConfig config = TinyPush(EncoderMode::kMprNoRs);
  config.iterations = 10;
  config.checkpoints = true;
  TrainResult result = Train(config);
  const fs::path dir = ScratchDir("artifacts");
  WriteRunArtifacts(config, result, dir);
  for (const char* name : {"config.cfg", "seeds.txt", "metrics.csv", "reward.svg",
                           "distances.csv", "representations.csv", "mds.csv",
                           "mds.svg", "checkpoints/encoder.ckpt",
                           "checkpoints/q_net.ckpt"}) {
    CAPTURE(name);
    CHECK(fs::exists(dir / name));
  }
  int heatmaps = 0;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().filename().string().rfind("heatmap_", 0) == 0) ++heatmaps;
  }
  CHECK(heatmaps == 4);

  // The snapshot reproduces the run's config and the checkpoints restore.
  std::ifstream cfg(dir / "config.cfg");
  std::ostringstream a, b;
  WriteConfig(ParseConfig(cfg), a);
  WriteConfig(config, b);
  CHECK(a.str() == b.str());
  Agent restored(config);
  restored.LoadCheckpoints(dir / "checkpoints");
  const EvalResult original = Evaluate(*result.agent, 2, 5, 1);
  CHECK(Evaluate(restored, 2, 5, 1).episode_rewards == original.episode_rewards);
  fs::remove_all(dir);
}

}  // namespace
}  // namespace orchestrator
}  // namespace mprlab
