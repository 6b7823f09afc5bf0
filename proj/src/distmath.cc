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

#include "mprlab/distmath.h"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "mprlab/common.h"

namespace mprlab {
namespace distmath {
namespace {

int DiscreteIndex(const ActionValue& value, int size, const char* what) {
  const int* index = std::get_if<int>(&value);
  Check(index != nullptr,
        std::string("expected a discrete ") + what + " action");
  Check(*index >= 0 && *index < size,
        std::string(what) + " action index " + std::to_string(*index) +
            " outside [0, " + std::to_string(size) + ")");
  return *index;
}

const ActionValue& Component(const JointActionSample& sample, int component) {
  if (component == 0) return sample.ego_action;
  return sample.opp_action[component - 1];
}

void CheckArity(const JointActionSample& sample,
                const JointActionSpace& space) {
  Check(static_cast<int>(sample.opp_action.size()) + 1 ==
            space.num_components(),
        "joint action has " + std::to_string(sample.opp_action.size() + 1) +
            " components, space declares " +
            std::to_string(space.num_components()));
}

std::vector<std::string> SplitCsv(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream stream(line);
  std::string field;
  while (std::getline(stream, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

JointActionSpace JointActionSpace::Discrete(std::vector<int> sizes) {
  JointActionSpace space;
  for (int s : sizes) Check(s > 0, "discrete action sizes must be positive");
  space.continuous_dims.assign(sizes.size(), 0);
  space.sizes = std::move(sizes);
  return space;
}

JointActionSpace JointActionSpace::Continuous(std::vector<int> dims) {
  JointActionSpace space;
  for (int d : dims) Check(d > 0, "continuous widths must be positive");
  space.sizes.assign(dims.size(), 0);
  space.continuous_dims = std::move(dims);
  return space;
}

bool JointActionSpace::is_discrete() const {
  return std::all_of(sizes.begin(), sizes.end(), [](int s) { return s > 0; });
}

int JointActionSpace::num_cells() const {
  Check(is_discrete(), "num_cells requires a fully discrete space");
  int cells = 1;
  for (int s : sizes) cells *= s;
  return cells;
}

int JointActionSpace::embedded_dim() const {
  int dim = 0;
  for (size_t i = 0; i < sizes.size(); ++i) {
    dim += sizes[i] > 0 ? sizes[i] : continuous_dims[i];
  }
  return dim;
}

FrequencyTable::FrequencyTable(std::vector<int> dims,
                               std::vector<int64_t> counts, double smoothing)
    : dims_(std::move(dims)), counts_(std::move(counts)),
      smoothing_(smoothing) {
  Check(!dims_.empty(), "frequency table needs at least one dimension");
  size_t cells = 1;
  for (int d : dims_) {
    Check(d > 0, "frequency table dimensions must be positive");
    cells *= static_cast<size_t>(d);
  }
  Check(counts_.size() == cells, "count vector does not match dimensions");
  Check(smoothing_ >= 0.0 && std::isfinite(smoothing_),
        "smoothing must be a finite non-negative number");
  for (int64_t c : counts_) {
    Check(c >= 0, "counts must be non-negative");
    total_ += c;
  }
  Check(total_ > 0, "frequency table is empty");
}

double FrequencyTable::Probability(int cell) const {
  Check(cell >= 0 && cell < num_cells(), "cell index out of range");
  return (static_cast<double>(counts_[cell]) + smoothing_) /
         (static_cast<double>(total_) + smoothing_ * num_cells());
}

std::vector<double> FrequencyTable::Probabilities() const {
  std::vector<double> p(counts_.size());
  for (int c = 0; c < num_cells(); ++c) p[c] = Probability(c);
  return p;
}

int FrequencyTable::CellIndex(std::span<const int> components) const {
  Check(components.size() == dims_.size(), "cell arity mismatch");
  int index = 0;
  for (size_t i = 0; i < dims_.size(); ++i) {
    Check(components[i] >= 0 && components[i] < dims_[i],
          "cell component out of range");
    index = index * dims_[i] + components[i];
  }
  return index;
}

FrequencyTable FrequencyTable::WithSmoothing(double smoothing) const {
  return FrequencyTable(dims_, counts_, smoothing);
}

FrequencyTable BuildFrequencyTable(std::span<const JointActionSample> samples,
                                   const JointActionSpace& space,
                                   double smoothing) {
  Check(!samples.empty(), "cannot build a frequency table from no samples");
  Check(space.is_discrete(), "frequency tables need a discrete action space");
  std::vector<int64_t> counts(space.num_cells(), 0);
  for (const auto& sample : samples) {
    CheckArity(sample, space);
    int index = 0;
    for (int c = 0; c < space.num_components(); ++c) {
      index = index * space.sizes[c] +
              DiscreteIndex(Component(sample, c), space.sizes[c],
                            c == 0 ? "ego" : "opponent");
    }
    ++counts[index];
  }
  return FrequencyTable(space.sizes, std::move(counts), smoothing);
}

SampleSet BuildSampleSet(std::span<const JointActionSample> samples,
                         const JointActionSpace& space) {
  Check(!samples.empty(), "cannot build a sample set from no samples");
  SampleSet set;
  set.points = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(samples.size()),
                                     space.embedded_dim());
  for (size_t row = 0; row < samples.size(); ++row) {
    const auto& sample = samples[row];
    CheckArity(sample, space);
    int column = 0;
    for (int c = 0; c < space.num_components(); ++c) {
      const ActionValue& value = Component(sample, c);
      if (space.sizes[c] > 0) {
        const int index = DiscreteIndex(value, space.sizes[c], "discrete");
        set.points(row, column + index) = 1.0;
        column += space.sizes[c];
        continue;
      }
      const auto* vec = std::get_if<std::vector<double>>(&value);
      Check(vec != nullptr, "expected a continuous action vector");
      Check(static_cast<int>(vec->size()) == space.continuous_dims[c],
            "continuous action has the wrong width");
      for (double v : *vec) {
        Check(std::isfinite(v), "continuous action components must be finite");
        set.points(row, column++) = v;
      }
    }
  }
  return set;
}

double SymmetricKl(std::span<const double> p, std::span<const double> q) {
  Check(p.size() == q.size(), "symmetric KL: distributions differ in size");
  double sum = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0 && q[i] == 0.0) continue;
    if (p[i] <= 0.0 || q[i] <= 0.0) {
      Fail("symmetric KL: cell " + std::to_string(i) +
           " has zero probability on one side only; build the tables with "
           "smoothing > 0");
    }
    // (p - q)(log p - log q) is the sum of both KL terms for this cell.
    sum += (p[i] - q[i]) * (std::log(p[i]) - std::log(q[i]));
  }
  return std::max(sum, 0.0);
}

double SymmetricKl(const FrequencyTable& p, const FrequencyTable& q) {
  Check(p.dims() == q.dims(), "symmetric KL: tables have different cells");
  const auto pp = p.Probabilities();
  const auto qq = q.Probabilities();
  return SymmetricKl(pp, qq);
}

double Wasserstein1d(std::span<const double> x, std::span<const double> y) {
  Check(!x.empty() && !y.empty(), "Wasserstein1d: empty input");
  std::vector<double> xs(x.begin(), x.end());
  std::vector<double> ys(y.begin(), y.end());
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  const size_t n = xs.size();
  const size_t m = ys.size();
  if (n == m) {
    double sum = 0.0;
    for (size_t i = 0; i < n; ++i) sum += std::abs(xs[i] - ys[i]);
    return sum / static_cast<double>(n);
  }
  // Integrate |F_x^-1(u) - F_y^-1(u)| over the merged quantile breakpoints
  // i/n and j/m, compared as integers to avoid rounding drift.
  double sum = 0.0;
  size_t i = 0;
  size_t j = 0;
  uint64_t position = 0;  // in units of 1/(n*m)
  const uint64_t end = static_cast<uint64_t>(n) * m;
  while (position < end) {
    const uint64_t next_x = (i + 1) * m;
    const uint64_t next_y = (j + 1) * n;
    const uint64_t next = std::min(next_x, next_y);
    sum += static_cast<double>(next - position) * std::abs(xs[i] - ys[j]);
    position = next;
    if (next == next_x) ++i;
    if (next == next_y) ++j;
  }
  return sum / static_cast<double>(end);
}

ProjectionSet MakeProjections(int dimension, int count, uint64_t seed) {
  Check(dimension > 0, "projection dimension must be positive");
  Check(count > 0, "projection count must be positive");
  Rng rng(seed);
  ProjectionSet set;
  set.seed = seed;
  set.directions.resize(count, dimension);
  for (int k = 0; k < count; ++k) {
    double norm = 0.0;
    while (norm < 1e-12) {
      for (int c = 0; c < dimension; ++c) {
        set.directions(k, c) = StandardNormal(rng);
      }
      norm = set.directions.row(k).norm();
    }
    set.directions.row(k) /= norm;
  }
  return set;
}

double SlicedWasserstein(const SampleSet& x, const SampleSet& y,
                         const ProjectionSet& projections) {
  Check(x.size() > 0 && y.size() > 0, "sliced Wasserstein: empty sample set");
  Check(projections.size() > 0, "sliced Wasserstein: no projections");
  Check(x.dimension() == y.dimension() &&
            x.dimension() == projections.dimension(),
        "sliced Wasserstein: dimension mismatch (" +
            std::to_string(x.dimension()) + ", " +
            std::to_string(y.dimension()) + ", " +
            std::to_string(projections.dimension()) + ")");
  const Eigen::MatrixXd px = x.points * projections.directions.transpose();
  const Eigen::MatrixXd py = y.points * projections.directions.transpose();
  double sum = 0.0;
  for (int k = 0; k < projections.size(); ++k) {
    const Eigen::VectorXd cx = px.col(k);
    const Eigen::VectorXd cy = py.col(k);
    sum += Wasserstein1d(std::span<const double>(cx.data(), cx.size()),
                         std::span<const double>(cy.data(), cy.size()));
  }
  return sum / projections.size();
}

PolicyDistanceMatrix BuildDistanceMatrix(
    const std::vector<Distribution>& distributions,
    const std::vector<std::string>& labels, DistanceMode mode,
    const ProjectionSet* projections, int workers) {
  const int n = static_cast<int>(distributions.size());
  Check(n >= 2, "distance matrix needs at least two distributions");
  Check(static_cast<int>(labels.size()) == n, "one label per distribution");
  const bool discrete = std::holds_alternative<FrequencyTable>(distributions[0]);
  for (const auto& d : distributions) {
    Check(std::holds_alternative<FrequencyTable>(d) == discrete,
          "cannot mix discrete and continuous distributions");
  }
  if (mode == DistanceMode::kKl) {
    Check(discrete, "KL mode needs frequency tables");
  } else {
    Check(!discrete, "sliced Wasserstein mode needs sample sets");
    Check(projections != nullptr, "sliced Wasserstein mode needs projections");
  }

  std::vector<std::pair<int, int>> cells;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) cells.emplace_back(i, j);
  }
  PolicyDistanceMatrix result;
  result.labels = labels;
  result.values = Eigen::MatrixXd::Zero(n, n);
  ParallelFor(static_cast<int>(cells.size()), workers, [&](int k) {
    const auto [i, j] = cells[k];
    double value = 0.0;
    if (mode == DistanceMode::kKl) {
      value = SymmetricKl(std::get<FrequencyTable>(distributions[i]),
                          std::get<FrequencyTable>(distributions[j]));
    } else {
      value = SlicedWasserstein(std::get<SampleSet>(distributions[i]),
                                std::get<SampleSet>(distributions[j]),
                                *projections);
    }
    result.values(i, j) = value;
    result.values(j, i) = value;
  });
  return result;
}

Eigen::MatrixXd PairwiseDistances(const Eigen::MatrixXd& points) {
  const Eigen::Index n = points.rows();
  const Eigen::VectorXd sq = points.rowwise().squaredNorm();
  Eigen::MatrixXd gram = points * points.transpose();
  Eigen::MatrixXd d(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (Eigen::Index j = i + 1; j < n; ++j) {
      const double v = std::sqrt(std::max(sq(i) + sq(j) - 2.0 * gram(i, j), 0.0));
      d(i, j) = v;
      d(j, i) = v;
    }
  }
  return d;
}

MdsResult ClassicalMds(const Eigen::MatrixXd& distances, int out_dim) {
  const Eigen::Index n = distances.rows();
  Check(n >= 1 && distances.cols() == n, "MDS needs a square matrix");
  Check(out_dim >= 1, "MDS output dimension must be at least 1");
  for (Eigen::Index i = 0; i < n; ++i) {
    Check(std::abs(distances(i, i)) <= 1e-9, "MDS needs a zero diagonal");
    for (Eigen::Index j = i + 1; j < n; ++j) {
      Check(std::abs(distances(i, j) - distances(j, i)) <= 1e-9,
            "MDS needs a symmetric matrix");
    }
  }
  const Eigen::MatrixXd squared = distances.array().square().matrix();
  const Eigen::VectorXd row_mean = squared.rowwise().mean();
  const double grand_mean = squared.mean();
  Eigen::MatrixXd b(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      b(i, j) = -0.5 * (squared(i, j) - row_mean(i) - row_mean(j) + grand_mean);
    }
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(b);
  Check(solver.info() == Eigen::Success, "MDS eigendecomposition failed");

  MdsResult result;
  // Eigen returns ascending order.
  result.eigenvalues = solver.eigenvalues().reverse();
  const Eigen::MatrixXd vectors = solver.eigenvectors().rowwise().reverse();
  double positive = 0.0;
  double negative = 0.0;
  for (Eigen::Index k = 0; k < n; ++k) {
    const double v = result.eigenvalues(k);
    (v >= 0.0 ? positive : negative) += std::abs(v);
  }
  const double mass = positive + negative;
  result.negative_mass_ratio = mass > 0.0 ? negative / mass : 0.0;
  result.warning = result.negative_mass_ratio > kMdsWarningRatio;

  // Eigenvalues at round-off level carry no geometry.
  const double floor =
      1e-12 * std::max(1.0, std::abs(result.eigenvalues.size() > 0
                                         ? result.eigenvalues(0)
                                         : 0.0));
  result.coordinates = Eigen::MatrixXd::Zero(n, out_dim);
  for (int k = 0; k < out_dim && k < n; ++k) {
    const double lambda = result.eigenvalues(k);
    if (lambda <= floor) break;
    Eigen::VectorXd v = vectors.col(k);
    Eigen::Index pivot = 0;
    v.cwiseAbs().maxCoeff(&pivot);
    if (v(pivot) < 0.0) v = -v;  // deterministic sign
    result.coordinates.col(k) = v * std::sqrt(lambda);
  }
  const Eigen::RowVectorXd center = result.coordinates.colwise().mean();
  result.coordinates.rowwise() -= center;
  return result;
}

void WriteFrequencyTableCsv(const FrequencyTable& table, std::ostream& out) {
  const int ego = table.dims()[0];
  const int opp = table.num_cells() / ego;
  out << "ego\\opp";
  for (int c = 0; c < opp; ++c) out << ',' << c;
  out << '\n';
  for (int r = 0; r < ego; ++r) {
    out << r;
    for (int c = 0; c < opp; ++c) {
      out << ',' << FormatDouble(table.Probability(r * opp + c));
    }
    out << '\n';
  }
}

void WriteDistanceMatrixCsv(const PolicyDistanceMatrix& matrix,
                            std::ostream& out) {
  out << "label";
  for (const auto& label : matrix.labels) out << ',' << label;
  out << '\n';
  for (int i = 0; i < matrix.size(); ++i) {
    out << matrix.labels[i];
    for (int j = 0; j < matrix.size(); ++j) {
      out << ',' << FormatDouble(matrix.values(i, j));
    }
    out << '\n';
  }
}

PolicyDistanceMatrix ReadDistanceMatrixCsv(std::istream& in) {
  std::string line;
  Check(static_cast<bool>(std::getline(in, line)), "distance CSV is empty");
  auto header = SplitCsv(line);
  Check(header.size() >= 2 && header[0] == "label",
        "distance CSV header must start with 'label'");
  PolicyDistanceMatrix matrix;
  matrix.labels.assign(header.begin() + 1, header.end());
  const int n = matrix.size();
  matrix.values = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    Check(static_cast<bool>(std::getline(in, line)),
          "distance CSV has too few rows");
    auto fields = SplitCsv(line);
    Check(static_cast<int>(fields.size()) == n + 1,
          "distance CSV row has the wrong width");
    Check(fields[0] == matrix.labels[i], "distance CSV rows out of order");
    for (int j = 0; j < n; ++j) matrix.values(i, j) = std::stod(fields[j + 1]);
  }
  return matrix;
}

}  // namespace distmath
}  // namespace mprlab
