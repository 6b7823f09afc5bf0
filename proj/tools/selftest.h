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

#ifndef MPRLAB_TOOLS_SELFTEST_H_
#define MPRLAB_TOOLS_SELFTEST_H_

#include <iosfwd>

namespace mprlab {
namespace tools {

// Runs the gradient-check, metric-property and environment-determinism
// suites, printing one PASS/FAIL line per suite. Returns the number of
// failed suites.
int RunSelftest(std::ostream& out);

}  // namespace tools
}  // namespace mprlab

#endif  // MPRLAB_TOOLS_SELFTEST_H_
