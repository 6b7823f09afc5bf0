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

#ifndef MPRLAB_TOOLS_CHECKS_H_
#define MPRLAB_TOOLS_CHECKS_H_

// Randomized verification suites shared by `mprlab selftest` and the
// acceptance binary. Each suite reports a verdict and a one-line summary.

#include <cstdint>
#include <string>

namespace mprlab {
namespace checks {

struct SuiteResult {
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

// Slack allowed for metric-property violations.
inline constexpr double kMetricSlack = 1e-9;
// Worst relative finite-difference error accepted by the gradient suite.
inline constexpr double kGradientTolerance = 1e-4;

// Non-negativity, symmetry and identity of indiscernibles for symmetric KL
// on smoothed tables and sliced Wasserstein on sample sets, `instances`
// random pairs each.
SuiteResult MetricPropertySuite(int instances, uint64_t seed);

// Sliced Wasserstein equals the exact 1-D distance in one dimension, and a
// Gaussian unit-norm shift gives 2/pi within `relative_tolerance` using
// `projections` directions and `points` samples per set.
SuiteResult SlicedWassersteinOracleSuite(int one_d_instances, int projections,
                                         int points, double relative_tolerance,
                                         uint64_t seed);

// Central finite differences on small random networks: dense layers with
// every activation, LSTM and GRU stacks through time, the side input, the
// metric-embedding loss and the action-prediction cross-entropy.
SuiteResult GradientCheckSuite(uint64_t seed);

// Four synthetic policies with distinguishable observation streams and a
// target geometry realizable in 32-D: the encoder is trained until the
// embedding loss is below 1e-3 and every cross-policy representation
// distance is within 5% of its target.
SuiteResult SyntheticRecoverySuite(uint64_t seed);

// Same seed and actions give identical episodes in both environments.
SuiteResult EnvironmentDeterminismSuite(int episodes, uint64_t seed);

}  // namespace checks
}  // namespace mprlab

#endif  // MPRLAB_TOOLS_CHECKS_H_
