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

#ifndef MPRLAB_ENCODER_H_
#define MPRLAB_ENCODER_H_

// Policy-representation encoders: a recurrent network maps the ego agent's
// observation history to a 32-dimensional vector. Three trainers are
// provided: the metric embedding loss, which regresses representation
// distances onto estimated policy distances, a triplet loss over policy
// labels, and opponent-action prediction.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mprlab/common.h"
#include "mprlab/distmath.h"
#include "mprlab/nn.h"

namespace mprlab {
namespace encoder {

inline constexpr int kRepresentationDim = 32;
inline constexpr double kDefaultTripletMargin = 1.0;

struct ObservationHistory {
  // One column per time step, oldest first.
  Eigen::MatrixXd observations;
  // Optional, aligned with `observations`: the opponents' actions at each
  // step (a discrete action is stored as its index).
  Eigen::MatrixXd opponent_actions;
  int64_t episode_id = 0;
  int label = 0;

  int length() const { return static_cast<int>(observations.cols()); }
};

using HistoryPtr = std::shared_ptr<const ObservationHistory>;

// Two-layer LSTM (128 units) followed by a linear 32-unit embedding layer.
std::vector<nn::LayerSpec> PushEncoderLayers();
// One GRU layer (32 units) followed by a 32-unit tanh layer.
std::vector<nn::LayerSpec> KeepEncoderLayers();
// Checks that the network ends in a 32-unit layer.
nn::Network MakeEncoder(int observation_dim, std::vector<nn::LayerSpec> layers,
                        uint64_t seed);

// Representation after consuming the whole history. An empty history maps
// to the embedding of the zero recurrent state.
Eigen::VectorXd Encode(const nn::Network& encoder,
                       const Eigen::MatrixXd& observations);
Eigen::VectorXd Encode(const nn::Network& encoder,
                       const ObservationHistory& history);

// Column t holds the representation after the first t observations, so the
// result has length() + 1 columns and column 0 is the empty-history value.
Eigen::MatrixXd EncodePrefixes(const nn::Network& encoder,
                               const Eigen::MatrixXd& observations);

// Advances the encoder one observation at a time. After k calls to Advance
// representation() equals column k of EncodePrefixes.
class EncoderCursor {
 public:
  explicit EncoderCursor(const nn::Network& encoder);

  void Reset();
  const Eigen::VectorXd& Advance(const Eigen::VectorXd& observation);
  const Eigen::VectorXd& representation() const { return representation_; }

 private:
  const nn::Network* encoder_;
  nn::RecurrentState state_;
  Eigen::VectorXd representation_;
};

// Stacks equal-length histories into the feature-major batch layout.
Eigen::MatrixXd PackHistories(std::span<const ObservationHistory* const> batch);

// Final representations of a batch of equal-length histories, one column
// each.
Eigen::MatrixXd EncodeBatch(const nn::Network& encoder,
                            std::span<const ObservationHistory* const> batch);

// ---------------------------------------------------------------------------
// Metric embedding.

struct EmbedPair {
  HistoryPtr first;
  HistoryPtr second;
  double target = 0.0;
};
using EmbedBatch = std::vector<EmbedPair>;

// Mean over columns of (||a - b|| - target)^2. Gradients (optional) are with
// respect to the representation columns.
double EmbedLossFromRepresentations(const Eigen::MatrixXd& first,
                                    const Eigen::MatrixXd& second,
                                    const Eigen::VectorXd& targets,
                                    Eigen::MatrixXd* grad_first = nullptr,
                                    Eigen::MatrixXd* grad_second = nullptr);

double EmbedLoss(const EmbedBatch& batch, const nn::Network& encoder);
// Accumulates the loss gradient into the encoder's parameter gradients and
// returns the loss.
double EmbedLossAndGradient(const EmbedBatch& batch, nn::Network& encoder);

// Draws `batch_size` pairs uniformly with replacement. Targets are
// `target_scale` times the matrix entry for the two labels.
EmbedBatch SampleEmbedBatch(std::span<const HistoryPtr> histories,
                            const distmath::PolicyDistanceMatrix& distances,
                            int batch_size, Rng& rng,
                            double target_scale = 1.0);

// ---------------------------------------------------------------------------
// Triplet baseline.

double TripletLoss(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                   const Eigen::VectorXd& negative, double margin);

struct Triplet {
  HistoryPtr anchor;
  HistoryPtr positive;
  HistoryPtr negative;
};
using TripletBatch = std::vector<Triplet>;

// Anchors are drawn uniformly; positives uniformly among histories sharing
// the anchor's label, negatives among the rest. Needs two labels present.
TripletBatch SampleTripletBatch(std::span<const HistoryPtr> histories,
                                int batch_size, Rng& rng);

double TripletBatchLossAndGradient(const TripletBatch& batch,
                                   nn::Network& encoder, double margin);

// ---------------------------------------------------------------------------
// Opponent-action prediction baseline. The head maps the representation
// after observation t to a prediction of the opponent action at step t.

// Mean cross-entropy of softmax(logits) columns against the actions.
double CrossEntropyFromLogits(const Eigen::MatrixXd& logits,
                              std::span<const int> actions,
                              Eigen::MatrixXd* grad = nullptr);

// Mean negative log-likelihood of diagonal Gaussians. The first half of the
// rows of `outputs` are means, the second half log standard deviations.
double GaussianNllFromOutputs(const Eigen::MatrixXd& outputs,
                              const Eigen::MatrixXd& targets,
                              Eigen::MatrixXd* grad = nullptr);

enum class ActionHead { kCategorical, kGaussian };

struct ActionPredictor {
  ActionHead head = ActionHead::kCategorical;
  // Categories (kCategorical) or action dimensions (kGaussian).
  int action_size = 0;
};

nn::Network MakePredictionHead(const ActionPredictor& predictor, uint64_t seed);

// Mean per-step loss over a batch of equal-length histories that carry
// opponent actions. Accumulates gradients into both networks.
double ActionPredictionLossAndGradient(
    std::span<const ObservationHistory* const> batch,
    const ActionPredictor& predictor, nn::Network& encoder, nn::Network& head);
double ActionPredictionLoss(std::span<const ObservationHistory* const> batch,
                            const ActionPredictor& predictor,
                            const nn::Network& encoder, const nn::Network& head);

// ---------------------------------------------------------------------------
// Representation export.

struct RepresentationRow {
  int64_t episode_id = 0;
  std::string label;
  int t = 0;
  Eigen::VectorXd values;
};

// Header: episode_id,label,t,r0,...,r31.
void WriteRepresentationsCsv(std::span<const RepresentationRow> rows,
                             std::ostream& out);
std::vector<RepresentationRow> ReadRepresentationsCsv(std::istream& in);

}  // namespace encoder
}  // namespace mprlab

#endif  // MPRLAB_ENCODER_H_
