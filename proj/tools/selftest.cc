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

#include "selftest.h"

#include <ostream>

#include "checks.h"
#include "mprlab/common.h"

namespace mprlab {
namespace tools {

int RunSelftest(std::ostream& out) {
  struct Suite {
    const char* name;
    checks::SuiteResult (*run)();
  };
  const Suite suites[] = {
      {"gradient-check", [] { return checks::GradientCheckSuite(1); }},
      {"metric-properties", [] { return checks::MetricPropertySuite(200, 2); }},
      {"sliced-wasserstein-oracle",
       [] { return checks::SlicedWassersteinOracleSuite(200, 500, 2000, 0.05, 3); }},
      {"environment-determinism",
       [] { return checks::EnvironmentDeterminismSuite(10, 4); }},
  };
  int failures = 0;
  for (const Suite& suite : suites) {
    checks::SuiteResult result;
    try {
      result = suite.run();
    } catch (const std::exception& e) {
      result.pass = false;
      result.detail = std::string("threw: ") + e.what();
    }
    if (!result.pass) ++failures;
    out << (result.pass ? "PASS " : "FAIL ") << suite.name << ": "
        << result.detail << '\n';
  }
  return failures;
}

}  // namespace tools
}  // namespace mprlab
