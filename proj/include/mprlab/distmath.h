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

#ifndef MPRLAB_DISTMATH_H_
#define MPRLAB_DISTMATH_H_

// Empirical joint-action distributions and the distances between them.
//
// Discrete joint actions are counted into a FrequencyTable whose cells are
// laid out row-major over (ego action, opponent 1 action, ..., opponent N
// action). Continuous joint actions are kept as raw points in a SampleSet,
// and compared with a Monte-Carlo sliced Wasserstein distance.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace mprlab {
namespace distmath {

// A single action: an index for discrete spaces, a real vector otherwise.
using ActionValue = std::variant<int, std::vector<double>>;

struct JointActionSample {
  ActionValue ego_action;
  std::vector<ActionValue> opp_action;  // one entry per opponent
  int policy_label = 0;
};

// Cardinality of each action component, ego first. A value of 0 marks a
// continuous component; its entry in `continuous_dims` gives the width.
struct JointActionSpace {
  std::vector<int> sizes;
  std::vector<int> continuous_dims;

  static JointActionSpace Discrete(std::vector<int> sizes);
  static JointActionSpace Continuous(std::vector<int> dims);

  int num_components() const { return static_cast<int>(sizes.size()); }
  bool is_discrete() const;
  // Number of table cells (discrete) or embedded dimension m (continuous).
  int num_cells() const;
  int embedded_dim() const;
};

class FrequencyTable {
 public:
  FrequencyTable(std::vector<int> dims, std::vector<int64_t> counts,
                 double smoothing);

  const std::vector<int>& dims() const { return dims_; }
  const std::vector<int64_t>& counts() const { return counts_; }
  int64_t total() const { return total_; }
  double smoothing() const { return smoothing_; }
  int num_cells() const { return static_cast<int>(counts_.size()); }

  // (count(c) + smoothing) / (total + smoothing * num_cells).
  double Probability(int cell) const;
  std::vector<double> Probabilities() const;

  int CellIndex(std::span<const int> components) const;

  // Same counts under a different pseudo-count.
  FrequencyTable WithSmoothing(double smoothing) const;

 private:
  std::vector<int> dims_;
  std::vector<int64_t> counts_;
  int64_t total_ = 0;
  double smoothing_ = 0.0;
};

// Points are rows; columns are the concatenated ego and opponent actions.
struct SampleSet {
  Eigen::MatrixXd points;

  int dimension() const { return static_cast<int>(points.cols()); }
  int size() const { return static_cast<int>(points.rows()); }
};

// Unit directions are rows.
struct ProjectionSet {
  Eigen::MatrixXd directions;
  uint64_t seed = 0;

  int dimension() const { return static_cast<int>(directions.cols()); }
  int size() const { return static_cast<int>(directions.rows()); }
};

struct PolicyDistanceMatrix {
  Eigen::MatrixXd values;
  std::vector<std::string> labels;

  int size() const { return static_cast<int>(labels.size()); }
};

using Distribution = std::variant<FrequencyTable, SampleSet>;

enum class DistanceMode { kKl, kSlicedWasserstein };

inline constexpr int kDefaultProjectionCount = 100;
inline constexpr double kDefaultSmoothing = 1.0;

FrequencyTable BuildFrequencyTable(std::span<const JointActionSample> samples,
                                   const JointActionSpace& space,
                                   double smoothing);

// Discrete components become one-hot coordinates.
SampleSet BuildSampleSet(std::span<const JointActionSample> samples,
                         const JointActionSpace& space);

// KL(p||q) + KL(q||p) with natural log.
double SymmetricKl(const FrequencyTable& p, const FrequencyTable& q);
double SymmetricKl(std::span<const double> p, std::span<const double> q);

// Exact W1 between two empirical distributions on the real line.
double Wasserstein1d(std::span<const double> x, std::span<const double> y);

// Directions are normalized standard Gaussian draws, i.e. uniform on the
// unit sphere.
ProjectionSet MakeProjections(int dimension, int count, uint64_t seed);

double SlicedWasserstein(const SampleSet& x, const SampleSet& y,
                         const ProjectionSet& projections);

// Cells are independent and may be computed on `workers` threads.
PolicyDistanceMatrix BuildDistanceMatrix(
    const std::vector<Distribution>& distributions,
    const std::vector<std::string>& labels, DistanceMode mode,
    const ProjectionSet* projections = nullptr, int workers = 1);

struct MdsResult {
  Eigen::MatrixXd coordinates;  // n x out_dim, centered
  Eigen::VectorXd eigenvalues;  // all eigenvalues, descending
  double negative_mass_ratio = 0.0;
  bool warning = false;  // negative_mass_ratio above kMdsWarningRatio
};

inline constexpr double kMdsWarningRatio = 0.05;

// Classical (Torgerson) scaling of a symmetric distance matrix.
MdsResult ClassicalMds(const Eigen::MatrixXd& distances, int out_dim);

Eigen::MatrixXd PairwiseDistances(const Eigen::MatrixXd& points);

// Ego actions as rows, flattened opponent joint actions as columns.
void WriteFrequencyTableCsv(const FrequencyTable& table, std::ostream& out);
void WriteDistanceMatrixCsv(const PolicyDistanceMatrix& matrix,
                            std::ostream& out);
PolicyDistanceMatrix ReadDistanceMatrixCsv(std::istream& in);

}  // namespace distmath
}  // namespace mprlab

#endif  // MPRLAB_DISTMATH_H_
