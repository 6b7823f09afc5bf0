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

// Command-line front end: training runs and campaigns, evaluation of saved
// runs, distribution sampling, heatmaps, MDS exports and the self-test.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mprlab/config.h"
#include "mprlab/distmath.h"
#include "mprlab/encoder.h"
#include "mprlab/orchestrator.h"
#include "mprlab/plot.h"
#include "selftest.h"

namespace mprlab {
namespace tools {
namespace {

namespace fs = std::filesystem;
using orchestrator::ExperimentConfig;

// Options shared by the commands that build an experiment configuration.
struct ConfigOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<int> workers;
  std::optional<uint64_t> seed;

  void Register(CLI::App* app) {
    app->add_option("--config", config_path, "Experiment config (key = value)");
    app->add_option("--override", overrides,
                    "Config override key=value; repeatable and applied last")
        ->take_all();
    app->add_option("--out", out, "Output directory (must not exist)");
    app->add_option("--workers", workers, "Rollout worker threads")
        ->check(CLI::PositiveNumber);
    app->add_option("--seed", seed, "Master seed");
  }

  ExperimentConfig Load() const {
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const std::string& text : overrides) {
      pairs.push_back(orchestrator::ParseOverride(text));
    }
    if (seed) pairs.emplace_back("seed", std::to_string(*seed));
    if (workers) {
      pairs.emplace_back("orchestrator.workers", std::to_string(*workers));
    }
    if (config_path.empty()) return orchestrator::ConfigFromPairs(pairs);
    std::ifstream in(config_path);
    Check(in.good(), "cannot open config " + config_path);
    return orchestrator::ParseConfig(in, pairs);
  }

  fs::path OutputDir(const std::string& default_name) const {
    if (!out.empty()) return fs::path(out);
    return orchestrator::DefaultOutputRoot() / default_name;
  }
};

std::string RunName(const ExperimentConfig& config) {
  return envs::EnvName(config.env) + "-" +
         orchestrator::AlgorithmName(config.algorithm) + "-" +
         orchestrator::EncoderModeName(config.mode) + "-seed" +
         std::to_string(config.seed);
}

void WriteFile(const fs::path& path, const std::function<void(std::ostream&)>& write) {
  std::ofstream out(path);
  Check(out.good(), "cannot open " + path.string() + " for writing");
  write(out);
  out.flush();
  Check(out.good(), "failed writing " + path.string());
}

orchestrator::TrainResult TrainOne(const ExperimentConfig& config, bool quiet) {
  std::cerr << "training " << RunName(config) << "\n";
  return orchestrator::Train(config, [&](const orchestrator::MetricsRow& row) {
    if (quiet) return;
    std::cerr << "  step " << row.step << "  test " << FormatDouble(row.test_reward)
              << "  ma " << FormatDouble(row.test_reward_ma) << "  rl_loss "
              << FormatDouble(row.rl_loss) << "  enc_loss "
              << FormatDouble(row.encoder_loss) << "\n";
  });
}

int RunTrain(const ConfigOptions& options, int seeds, bool quiet) {
  ExperimentConfig config = options.Load();
  if (seeds <= 1) {
    const fs::path dir = options.OutputDir(RunName(config));
    orchestrator::WriteDirectoryAtomically(dir, [&](const fs::path& temp) {
      orchestrator::TrainResult result = TrainOne(config, quiet);
      orchestrator::WriteRunArtifacts(config, result, temp);
    });
    std::cout << dir.string() << "\n";
    return 0;
  }
  // A campaign: consecutive seeds, one run directory each, plus the curve of
  // the moving-average test reward with a one-standard-deviation band.
  const uint64_t first = config.seed;
  ExperimentConfig named = config;
  const std::string name = envs::EnvName(config.env) + "-" +
                           orchestrator::AlgorithmName(config.algorithm) + "-" +
                           orchestrator::EncoderModeName(config.mode) + "-seeds" +
                           std::to_string(first) + "-" +
                           std::to_string(first + seeds - 1);
  const fs::path dir = options.OutputDir(name);
  orchestrator::WriteDirectoryAtomically(dir, [&](const fs::path& temp) {
    std::vector<std::vector<orchestrator::MetricsRow>> runs;
    std::ostringstream summary;
    summary << "seed,final_test_reward_ma\n";
    for (int s = 0; s < seeds; ++s) {
      named.seed = first + static_cast<uint64_t>(s);
      orchestrator::TrainResult result = TrainOne(named, quiet);
      orchestrator::WriteRunArtifacts(named, result,
                                      temp / ("seed" + std::to_string(named.seed)));
      summary << named.seed << ','
              << FormatDouble(result.metrics.empty()
                                  ? 0.0
                                  : result.metrics.back().test_reward_ma)
              << '\n';
      runs.push_back(result.metrics);
    }
    orchestrator::CurveStats stats = orchestrator::AggregateRuns(runs);
    WriteFile(temp / "summary.csv", [&](std::ostream& out) { out << summary.str(); });
    WriteFile(temp / "reward.svg", [&](std::ostream& out) {
      plot::WriteCurveSvg({{orchestrator::EncoderModeName(config.mode), stats.steps,
                            stats.mean, stats.stddev}},
                          name, "environment steps", "moving-average test reward",
                          out);
    });
  });
  std::cout << dir.string() << "\n";
  return 0;
}

int RunEval(const std::string& run_dir, std::optional<int> episodes,
            std::optional<int> workers, uint64_t seed) {
  const fs::path dir(run_dir);
  std::ifstream in(dir / "config.cfg");
  Check(in.good(), "no config.cfg in " + run_dir);
  ExperimentConfig config = orchestrator::ParseConfig(in);
  if (workers) config.workers = *workers;
  orchestrator::Agent agent(config);
  agent.LoadCheckpoints(dir / "checkpoints");
  orchestrator::EvalResult eval = orchestrator::Evaluate(
      agent, episodes.value_or(config.test_episodes), seed, config.workers);
  std::cout << "mean_reward " << FormatDouble(eval.mean_reward) << "\n";
  for (size_t i = 0; i < eval.episode_rewards.size(); ++i) {
    std::cout << "episode " << i << " opponent " << eval.opponent_labels[i]
              << " reward " << FormatDouble(eval.episode_rewards[i]) << "\n";
  }
  return 0;
}

orchestrator::DistributionStore SampleRandomStore(const ExperimentConfig& config) {
  return orchestrator::SampleDistributions(
      config.env, config.env_config, envs::TrainingPolicies(config.env),
      config.num_sample,
      orchestrator::UniformRandomEgo(config.env, config.env_config),
      DeriveSeed(orchestrator::StreamSeed(config.seed,
                                          orchestrator::SeedStream::kDistributionSampling),
                 0),
      config.distance.smoothing, config.workers);
}

void WriteHeatmaps(const orchestrator::DistributionStore& store, const fs::path& dir) {
  for (int i = 0; i < store.size(); ++i) {
    WriteFile(dir / ("heatmap_" + orchestrator::LabelFileName(store.labels[i]) + ".csv"),
              [&](std::ostream& out) {
                orchestrator::WriteHeatmapCsv(orchestrator::HeatmapMatrix(store, i),
                                              out);
              });
  }
}

int RunSampleDist(const ConfigOptions& options) {
  ExperimentConfig config = options.Load();
  const fs::path dir = options.OutputDir("sample-dist-" + envs::EnvName(config.env) +
                                         "-seed" + std::to_string(config.seed));
  orchestrator::WriteDirectoryAtomically(dir, [&](const fs::path& temp) {
    orchestrator::DistributionStore store = SampleRandomStore(config);
    distmath::PolicyDistanceMatrix distances = orchestrator::ComputeDistances(
        store, config.distance,
        orchestrator::StreamSeed(config.seed, orchestrator::SeedStream::kProjections),
        config.workers);
    WriteFile(temp / "config.cfg",
              [&](std::ostream& out) { orchestrator::WriteConfig(config, out); });
    WriteFile(temp / "distances.csv",
              [&](std::ostream& out) { distmath::WriteDistanceMatrixCsv(distances, out); });
    if (store.space.is_discrete()) WriteHeatmaps(store, temp);
    distmath::WriteDistanceMatrixCsv(distances, std::cout);
  });
  std::cout << dir.string() << "\n";
  return 0;
}

int RunHeatmap(const ConfigOptions& options) {
  ExperimentConfig config = options.Load();
  const fs::path dir = options.OutputDir("heatmap-" + envs::EnvName(config.env) +
                                         "-seed" + std::to_string(config.seed));
  orchestrator::WriteDirectoryAtomically(dir, [&](const fs::path& temp) {
    orchestrator::DistributionStore store = SampleRandomStore(config);
    Check(store.space.is_discrete(),
          "heatmaps need a discrete joint-action space (env = push)");
    WriteFile(temp / "config.cfg",
              [&](std::ostream& out) { orchestrator::WriteConfig(config, out); });
    WriteHeatmaps(store, temp);
  });
  std::cout << dir.string() << "\n";
  return 0;
}

int RunMds(const std::string& representations, const std::string& mode,
           int last_steps, const std::string& out) {
  std::ifstream in(representations);
  Check(in.good(), "cannot open " + representations);
  auto rows = encoder::ReadRepresentationsCsv(in);
  orchestrator::MdsMode mds_mode;
  if (mode == "per-step") {
    mds_mode = orchestrator::MdsMode::kPerStep;
  } else if (mode == "episode-mean") {
    mds_mode = orchestrator::MdsMode::kEpisodeMean;
  } else {
    Fail("unknown MDS mode '" + mode + "' (expected per-step or episode-mean)");
  }
  orchestrator::MdsExport mds = orchestrator::ComputeMds(rows, mds_mode, last_steps);
  const fs::path dir =
      out.empty() ? orchestrator::DefaultOutputRoot() / "mds" : fs::path(out);
  orchestrator::WriteDirectoryAtomically(dir, [&](const fs::path& temp) {
    WriteFile(temp / "mds.csv",
              [&](std::ostream& o) { orchestrator::WriteMdsCsv(mds, o); });
    std::vector<plot::ScatterPoint> points;
    for (const auto& p : mds.points) {
      points.push_back({p.position.x(), p.position.y(), p.label});
    }
    WriteFile(temp / "mds.svg", [&](std::ostream& o) {
      plot::WriteScatterSvg(points, "policy representations (MDS)", o);
    });
  });
  if (mds.mds.warning) {
    std::cerr << "warning: negative eigenvalue mass ratio "
              << FormatDouble(mds.mds.negative_mass_ratio) << "\n";
  }
  std::cout << dir.string() << "\n";
  return 0;
}

int Main(int argc, char** argv) {
  CLI::App app{"Policy-representation experiments for two-agent environments"};
  app.require_subcommand(1);

  ConfigOptions train_options;
  int seeds = 1;
  bool quiet = false;
  CLI::App* train = app.add_subcommand("train", "Train one run or a seed campaign");
  train_options.Register(train);
  train->add_option("--seeds", seeds, "Number of consecutive seeds to run")
      ->check(CLI::PositiveNumber);
  train->add_flag("--quiet", quiet, "Suppress per-evaluation progress lines");

  std::string run_dir;
  std::optional<int> eval_episodes;
  std::optional<int> eval_workers;
  uint64_t eval_seed = 0;
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a saved run on its test set");
  eval->add_option("--run", run_dir, "Run directory with config.cfg and checkpoints/")
      ->required();
  eval->add_option("--episodes", eval_episodes, "Test episodes")
      ->check(CLI::PositiveNumber);
  eval->add_option("--workers", eval_workers, "Rollout worker threads")
      ->check(CLI::PositiveNumber);
  eval->add_option("--seed", eval_seed, "Evaluation seed");

  ConfigOptions sample_options;
  CLI::App* sample = app.add_subcommand(
      "sample-dist", "Sample random-ego joint-action distributions and distances");
  sample_options.Register(sample);

  ConfigOptions heatmap_options;
  CLI::App* heatmap =
      app.add_subcommand("heatmap", "Joint-action frequency heatmaps per policy");
  heatmap_options.Register(heatmap);

  std::string representations;
  std::string mds_mode = "per-step";
  int last_steps = 10;
  std::string mds_out;
  CLI::App* mds = app.add_subcommand("mds", "2-D MDS of exported representations");
  mds->add_option("--representations", representations, "representations.csv")
      ->required();
  mds->add_option("--mode", mds_mode, "per-step or episode-mean");
  mds->add_option("--last-steps", last_steps,
                  "Per-step mode: final steps kept per episode (0 = all)")
      ->check(CLI::NonNegativeNumber);
  mds->add_option("--out", mds_out, "Output directory (must not exist)");

  CLI::App* selftest = app.add_subcommand(
      "selftest", "Gradient checks, metric properties and environment determinism");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*train) return RunTrain(train_options, seeds, quiet);
    if (*eval) return RunEval(run_dir, eval_episodes, eval_workers, eval_seed);
    if (*sample) return RunSampleDist(sample_options);
    if (*heatmap) return RunHeatmap(heatmap_options);
    if (*mds) return RunMds(representations, mds_mode, last_steps, mds_out);
    if (*selftest) return RunSelftest(std::cout) == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n"
              << "run with --help for usage\n";
    return 1;
  }
  return 1;
}

}  // namespace
}  // namespace tools
}  // namespace mprlab

int main(int argc, char** argv) { return mprlab::tools::Main(argc, argv); }
