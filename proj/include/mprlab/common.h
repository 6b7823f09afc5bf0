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

#ifndef MPRLAB_COMMON_H_
#define MPRLAB_COMMON_H_

#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>

namespace mprlab {

// Every recoverable failure in the library surfaces as this exception type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

[[noreturn]] inline void Fail(const std::string& message) {
  throw Error(message);
}

inline void Check(bool condition, const std::string& message) {
  if (!condition) Fail(message);
}

using Rng = std::mt19937_64;

// splitmix64 finalizer; used to derive independent RNG streams from one
// master seed.
inline uint64_t MixSeed(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t DeriveSeed(uint64_t master, uint64_t stream) {
  return MixSeed(MixSeed(master) ^ MixSeed(stream + 0x632be59bd9b4e019ULL));
}

// Uniform double in [0, 1) from the top 53 bits. Independent of the standard
// library's distribution implementations so streams are portable.
inline double UniformUnit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double Uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * UniformUnit(rng);
}

// Uniform integer in [0, n).
inline int UniformInt(Rng& rng, int n) {
  Check(n > 0, "UniformInt: n must be positive");
  return static_cast<int>(UniformUnit(rng) * n);
}

// Standard normal via Box-Muller (one draw per call).
double StandardNormal(Rng& rng);

// Runs fn(0..n-1) on up to `workers` threads. Each index runs exactly once;
// the first exception thrown by any task is rethrown on the caller.
void ParallelFor(int n, int workers, const std::function<void(int)>& fn);

// Shortest decimal text that parses back to the same double.
std::string FormatDouble(double value);

}  // namespace mprlab

#endif  // MPRLAB_COMMON_H_
