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

#include "mprlab/encoder.h"

#include <cmath>
#include <istream>
#include <map>
#include <numbers>
#include <ostream>
#include <sstream>

namespace mprlab {
namespace encoder {
namespace {

// The last `batch` columns of a feature-major sequence output.
Eigen::MatrixXd FinalStep(const Eigen::MatrixXd& outputs, int batch) {
  return outputs.rightCols(batch);
}

// Output gradient that is zero everywhere except the final time step.
Eigen::MatrixXd FinalStepGradient(const Eigen::MatrixXd& final_grad, int steps) {
  const int batch = static_cast<int>(final_grad.cols());
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(final_grad.rows(), steps * batch);
  grad.rightCols(batch) = final_grad;
  return grad;
}

int CheckLabel(const ObservationHistory& history,
               const distmath::PolicyDistanceMatrix& distances) {
  Check(history.label >= 0 && history.label < distances.size(),
        "no distance entry for policy label " + std::to_string(history.label));
  return history.label;
}

}  // namespace

std::vector<nn::LayerSpec> PushEncoderLayers() {
  return {nn::LayerSpec::Lstm(128), nn::LayerSpec::Lstm(128),
          nn::LayerSpec::Dense(kRepresentationDim, nn::Activation::kIdentity)};
}

std::vector<nn::LayerSpec> KeepEncoderLayers() {
  return {nn::LayerSpec::Gru(32),
          nn::LayerSpec::Dense(kRepresentationDim, nn::Activation::kTanh)};
}

nn::Network MakeEncoder(int observation_dim, std::vector<nn::LayerSpec> layers,
                        uint64_t seed) {
  Check(!layers.empty() && layers.back().units == kRepresentationDim,
        "encoder must end in a " + std::to_string(kRepresentationDim) +
            "-unit layer");
  return nn::Network(observation_dim, std::move(layers), seed);
}

Eigen::VectorXd Encode(const nn::Network& encoder,
                       const Eigen::MatrixXd& observations) {
  Check(observations.rows() == encoder.input_dim(),
        "observation dimension " + std::to_string(observations.rows()) +
            " does not match encoder input " +
            std::to_string(encoder.input_dim()));
  if (observations.cols() == 0) {
    return encoder.OutputFromState(encoder.ZeroState(1)).col(0);
  }
  return encoder.Infer(observations, 1).rightCols(1);
}

Eigen::VectorXd Encode(const nn::Network& encoder,
                       const ObservationHistory& history) {
  return Encode(encoder, history.observations);
}

Eigen::MatrixXd EncodePrefixes(const nn::Network& encoder,
                               const Eigen::MatrixXd& observations) {
  Check(observations.rows() == encoder.input_dim(),
        "observation dimension does not match encoder input");
  Eigen::MatrixXd reps(encoder.output_dim(), observations.cols() + 1);
  reps.col(0) = encoder.OutputFromState(encoder.ZeroState(1)).col(0);
  if (observations.cols() > 0) {
    reps.rightCols(observations.cols()) = encoder.Infer(observations, 1);
  }
  return reps;
}

EncoderCursor::EncoderCursor(const nn::Network& encoder) : encoder_(&encoder) {
  Reset();
}

void EncoderCursor::Reset() {
  state_ = encoder_->ZeroState(1);
  representation_ = encoder_->OutputFromState(state_).col(0);
}

const Eigen::VectorXd& EncoderCursor::Advance(const Eigen::VectorXd& observation) {
  Check(observation.size() == encoder_->input_dim(),
        "observation dimension does not match encoder input");
  representation_ = encoder_->Infer(observation, 1, nullptr, &state_).col(0);
  return representation_;
}

Eigen::MatrixXd PackHistories(std::span<const ObservationHistory* const> batch) {
  Check(!batch.empty(), "cannot pack an empty batch");
  const int dim = static_cast<int>(batch[0]->observations.rows());
  const int steps = batch[0]->length();
  Check(steps > 0, "histories in a training batch must be non-empty");
  const int b = static_cast<int>(batch.size());
  Eigen::MatrixXd packed(dim, steps * b);
  for (int i = 0; i < b; ++i) {
    Check(batch[i]->length() == steps && batch[i]->observations.rows() == dim,
          "histories in a batch must share length and observation dimension");
    for (int t = 0; t < steps; ++t) {
      packed.col(t * b + i) = batch[i]->observations.col(t);
    }
  }
  return packed;
}

Eigen::MatrixXd EncodeBatch(const nn::Network& encoder,
                            std::span<const ObservationHistory* const> batch) {
  const int b = static_cast<int>(batch.size());
  return FinalStep(encoder.Infer(PackHistories(batch), b), b);
}

double EmbedLossFromRepresentations(const Eigen::MatrixXd& first,
                                    const Eigen::MatrixXd& second,
                                    const Eigen::VectorXd& targets,
                                    Eigen::MatrixXd* grad_first,
                                    Eigen::MatrixXd* grad_second) {
  const int n = static_cast<int>(first.cols());
  Check(n > 0, "embed loss needs a non-empty batch");
  Check(second.cols() == n && targets.size() == n && first.rows() == second.rows(),
        "embed loss shape mismatch");
  if (grad_first) *grad_first = Eigen::MatrixXd::Zero(first.rows(), n);
  if (grad_second) *grad_second = Eigen::MatrixXd::Zero(first.rows(), n);
  double loss = 0.0;
  for (int k = 0; k < n; ++k) {
    Check(targets(k) >= 0.0, "embed targets must be non-negative");
    const Eigen::VectorXd diff = first.col(k) - second.col(k);
    const double dist = diff.norm();
    const double residual = dist - targets(k);
    loss += residual * residual;
    // The distance is not differentiable at zero; use the zero subgradient.
    if (dist > 0.0) {
      const Eigen::VectorXd g = (2.0 * residual / (dist * n)) * diff;
      if (grad_first) grad_first->col(k) = g;
      if (grad_second) grad_second->col(k) = -g;
    }
  }
  return loss / n;
}

namespace {

// Histories of a pair batch packed as [firsts..., seconds...].
std::vector<const ObservationHistory*> PairMembers(const EmbedBatch& batch) {
  std::vector<const ObservationHistory*> members;
  members.reserve(2 * batch.size());
  for (const auto& pair : batch) {
    Check(pair.first && pair.second, "null history in embed batch");
    members.push_back(pair.first.get());
  }
  for (const auto& pair : batch) members.push_back(pair.second.get());
  return members;
}

Eigen::VectorXd PairTargets(const EmbedBatch& batch) {
  Eigen::VectorXd targets(batch.size());
  for (size_t k = 0; k < batch.size(); ++k) targets(k) = batch[k].target;
  return targets;
}

}  // namespace

double EmbedLoss(const EmbedBatch& batch, const nn::Network& encoder) {
  Check(!batch.empty(), "embed loss needs a non-empty batch");
  const int n = static_cast<int>(batch.size());
  const Eigen::MatrixXd reps = EncodeBatch(encoder, PairMembers(batch));
  return EmbedLossFromRepresentations(reps.leftCols(n), reps.rightCols(n),
                                      PairTargets(batch));
}

double EmbedLossAndGradient(const EmbedBatch& batch, nn::Network& encoder) {
  Check(!batch.empty(), "embed loss needs a non-empty batch");
  const int n = static_cast<int>(batch.size());
  const auto members = PairMembers(batch);
  const Eigen::MatrixXd packed = PackHistories(members);
  const int steps = static_cast<int>(packed.cols()) / (2 * n);
  const Eigen::MatrixXd outputs = encoder.Forward(packed, 2 * n);
  const Eigen::MatrixXd reps = FinalStep(outputs, 2 * n);
  Eigen::MatrixXd grad_first, grad_second;
  const double loss =
      EmbedLossFromRepresentations(reps.leftCols(n), reps.rightCols(n),
                                   PairTargets(batch), &grad_first, &grad_second);
  Eigen::MatrixXd final_grad(reps.rows(), 2 * n);
  final_grad << grad_first, grad_second;
  encoder.Backward(FinalStepGradient(final_grad, steps));
  return loss;
}

EmbedBatch SampleEmbedBatch(std::span<const HistoryPtr> histories,
                            const distmath::PolicyDistanceMatrix& distances,
                            int batch_size, Rng& rng, double target_scale) {
  Check(!histories.empty(), "cannot sample an embed batch from an empty buffer");
  Check(histories.size() >= 2, "embed batches need at least two histories");
  Check(batch_size > 0, "batch size must be positive");
  const int n = static_cast<int>(histories.size());
  EmbedBatch batch;
  batch.reserve(batch_size);
  for (int k = 0; k < batch_size; ++k) {
    const HistoryPtr& a = histories[UniformInt(rng, n)];
    const HistoryPtr& b = histories[UniformInt(rng, n)];
    const double d = distances.values(CheckLabel(*a, distances),
                                      CheckLabel(*b, distances));
    batch.push_back({a, b, target_scale * d});
  }
  return batch;
}

double TripletLoss(const Eigen::VectorXd& anchor, const Eigen::VectorXd& positive,
                   const Eigen::VectorXd& negative, double margin) {
  Check(anchor.size() == positive.size() && anchor.size() == negative.size(),
        "triplet representation sizes differ");
  return std::max(0.0, (anchor - positive).squaredNorm() -
                           (anchor - negative).squaredNorm() + margin);
}

TripletBatch SampleTripletBatch(std::span<const HistoryPtr> histories,
                                int batch_size, Rng& rng) {
  Check(!histories.empty(), "cannot sample a triplet batch from an empty buffer");
  Check(batch_size > 0, "batch size must be positive");
  std::map<int, std::vector<int>> by_label;
  for (int i = 0; i < static_cast<int>(histories.size()); ++i) {
    by_label[histories[i]->label].push_back(i);
  }
  Check(by_label.size() >= 2, "triplet batches need at least two policy labels");
  const int n = static_cast<int>(histories.size());
  TripletBatch batch;
  batch.reserve(batch_size);
  for (int k = 0; k < batch_size; ++k) {
    const int a = UniformInt(rng, n);
    const auto& same = by_label[histories[a]->label];
    const int p = same[UniformInt(rng, static_cast<int>(same.size()))];
    const int others = n - static_cast<int>(same.size());
    // The r-th history (in buffer order) whose label differs from the anchor's.
    int r = UniformInt(rng, others);
    int neg = -1;
    for (int i = 0; i < n; ++i) {
      if (histories[i]->label == histories[a]->label) continue;
      if (r-- == 0) {
        neg = i;
        break;
      }
    }
    batch.push_back({histories[a], histories[p], histories[neg]});
  }
  return batch;
}

double TripletBatchLossAndGradient(const TripletBatch& batch,
                                   nn::Network& encoder, double margin) {
  Check(!batch.empty(), "triplet loss needs a non-empty batch");
  const int n = static_cast<int>(batch.size());
  std::vector<const ObservationHistory*> members(3 * n);
  for (int k = 0; k < n; ++k) {
    const Triplet& t = batch[k];
    Check(t.anchor && t.positive && t.negative, "null history in triplet batch");
    Check(t.anchor->label == t.positive->label &&
              t.anchor->label != t.negative->label,
          "triplet needs a same-label positive and a different-label negative");
    members[k] = t.anchor.get();
    members[n + k] = t.positive.get();
    members[2 * n + k] = t.negative.get();
  }
  const Eigen::MatrixXd packed = PackHistories(members);
  const int steps = static_cast<int>(packed.cols()) / (3 * n);
  const Eigen::MatrixXd reps = FinalStep(encoder.Forward(packed, 3 * n), 3 * n);
  Eigen::MatrixXd grad = Eigen::MatrixXd::Zero(reps.rows(), 3 * n);
  double loss = 0.0;
  for (int k = 0; k < n; ++k) {
    const Eigen::VectorXd a = reps.col(k);
    const Eigen::VectorXd p = reps.col(n + k);
    const Eigen::VectorXd q = reps.col(2 * n + k);
    const double value = TripletLoss(a, p, q, margin);
    loss += value;
    if (value > 0.0) {
      grad.col(k) = (2.0 / n) * (q - p);
      grad.col(n + k) = (-2.0 / n) * (a - p);
      grad.col(2 * n + k) = (2.0 / n) * (a - q);
    }
  }
  encoder.Backward(FinalStepGradient(grad, steps));
  return loss / n;
}

double CrossEntropyFromLogits(const Eigen::MatrixXd& logits,
                              std::span<const int> actions,
                              Eigen::MatrixXd* grad) {
  const int n = static_cast<int>(logits.cols());
  Check(n > 0 && static_cast<int>(actions.size()) == n,
        "cross-entropy needs one action per logit column");
  if (grad) grad->resize(logits.rows(), n);
  double loss = 0.0;
  for (int k = 0; k < n; ++k) {
    const int a = actions[k];
    Check(a >= 0 && a < logits.rows(), "action index out of range");
    const double top = logits.col(k).maxCoeff();
    const Eigen::VectorXd e = (logits.col(k).array() - top).exp();
    const double total = e.sum();
    loss += std::log(total) + top - logits(a, k);
    if (grad) {
      grad->col(k) = e / (total * n);
      (*grad)(a, k) -= 1.0 / n;
    }
  }
  return loss / n;
}

double GaussianNllFromOutputs(const Eigen::MatrixXd& outputs,
                              const Eigen::MatrixXd& targets,
                              Eigen::MatrixXd* grad) {
  const int d = static_cast<int>(targets.rows());
  const int n = static_cast<int>(targets.cols());
  Check(n > 0 && outputs.rows() == 2 * d && outputs.cols() == n,
        "Gaussian head needs 2 x action_dim outputs per target");
  if (grad) grad->resize(2 * d, n);
  const double half_log_two_pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double loss = 0.0;
  for (int k = 0; k < n; ++k) {
    for (int i = 0; i < d; ++i) {
      const double mean = outputs(i, k);
      const double log_std = outputs(d + i, k);
      const double z = (targets(i, k) - mean) * std::exp(-log_std);
      loss += 0.5 * z * z + log_std + half_log_two_pi;
      if (grad) {
        (*grad)(i, k) = -z * std::exp(-log_std) / n;
        (*grad)(d + i, k) = (1.0 - z * z) / n;
      }
    }
  }
  return loss / n;
}

nn::Network MakePredictionHead(const ActionPredictor& predictor, uint64_t seed) {
  Check(predictor.action_size > 0, "prediction head needs a positive action size");
  const int outputs = predictor.head == ActionHead::kCategorical
                          ? predictor.action_size
                          : 2 * predictor.action_size;
  return nn::Network(kRepresentationDim,
                     {nn::LayerSpec::Dense(outputs, nn::Activation::kIdentity)},
                     seed);
}

namespace {

// Opponent actions packed in the same column order as PackHistories.
Eigen::MatrixXd PackOpponentActions(
    std::span<const ObservationHistory* const> batch, int rows) {
  const int b = static_cast<int>(batch.size());
  const int steps = batch[0]->length();
  Eigen::MatrixXd packed(rows, steps * b);
  for (int i = 0; i < b; ++i) {
    Check(batch[i]->opponent_actions.rows() == rows &&
              batch[i]->opponent_actions.cols() == steps,
          "history lacks opponent actions of the expected shape");
    for (int t = 0; t < steps; ++t) {
      packed.col(t * b + i) = batch[i]->opponent_actions.col(t);
    }
  }
  return packed;
}

double PredictionLoss(const ActionPredictor& predictor,
                      const Eigen::MatrixXd& outputs,
                      std::span<const ObservationHistory* const> batch,
                      Eigen::MatrixXd* grad) {
  if (predictor.head == ActionHead::kCategorical) {
    const Eigen::MatrixXd packed = PackOpponentActions(batch, 1);
    std::vector<int> actions(packed.cols());
    for (int k = 0; k < packed.cols(); ++k) {
      const double a = packed(0, k);
      Check(a == std::floor(a), "categorical head needs discrete opponent actions");
      actions[k] = static_cast<int>(a);
    }
    return CrossEntropyFromLogits(outputs, actions, grad);
  }
  return GaussianNllFromOutputs(
      outputs, PackOpponentActions(batch, predictor.action_size), grad);
}

}  // namespace

double ActionPredictionLossAndGradient(
    std::span<const ObservationHistory* const> batch,
    const ActionPredictor& predictor, nn::Network& encoder, nn::Network& head) {
  const int b = static_cast<int>(batch.size());
  const Eigen::MatrixXd reps = encoder.Forward(PackHistories(batch), b);
  const Eigen::MatrixXd outputs = head.Forward(reps, b);
  Eigen::MatrixXd grad;
  const double loss = PredictionLoss(predictor, outputs, batch, &grad);
  encoder.Backward(head.Backward(grad).input);
  return loss;
}

double ActionPredictionLoss(std::span<const ObservationHistory* const> batch,
                            const ActionPredictor& predictor,
                            const nn::Network& encoder, const nn::Network& head) {
  const int b = static_cast<int>(batch.size());
  const Eigen::MatrixXd reps = encoder.Infer(PackHistories(batch), b);
  return PredictionLoss(predictor, head.Infer(reps, b), batch, nullptr);
}

void WriteRepresentationsCsv(std::span<const RepresentationRow> rows,
                             std::ostream& out) {
  const int dim = rows.empty() ? kRepresentationDim
                               : static_cast<int>(rows[0].values.size());
  out << "episode_id,label,t";
  for (int i = 0; i < dim; ++i) out << ",r" << i;
  out << "\n";
  for (const auto& row : rows) {
    Check(row.label.find(',') == std::string::npos,
          "representation labels may not contain commas");
    Check(row.values.size() == dim, "representation rows differ in dimension");
    out << row.episode_id << "," << row.label << "," << row.t;
    for (int i = 0; i < dim; ++i) out << "," << FormatDouble(row.values(i));
    out << "\n";
  }
}

std::vector<RepresentationRow> ReadRepresentationsCsv(std::istream& in) {
  std::string line;
  Check(static_cast<bool>(std::getline(in, line)) &&
            line.rfind("episode_id,label,t", 0) == 0,
        "representation CSV lacks its header");
  int dim = 0;
  for (char c : line) dim += (c == ',');
  dim -= 2;
  std::vector<RepresentationRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream fields(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(fields, cell, ',')) cells.push_back(cell);
    Check(static_cast<int>(cells.size()) == dim + 3,
          "representation CSV row has the wrong number of fields");
    RepresentationRow row;
    try {
      row.episode_id = std::stoll(cells[0]);
      row.label = cells[1];
      row.t = std::stoi(cells[2]);
      row.values.resize(dim);
      for (int i = 0; i < dim; ++i) row.values(i) = std::stod(cells[3 + i]);
    } catch (const std::logic_error&) {
      Fail("malformed number in representation CSV: " + line);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace encoder
}  // namespace mprlab
