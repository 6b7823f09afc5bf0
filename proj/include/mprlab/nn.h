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

#ifndef MPRLAB_NN_H_
#define MPRLAB_NN_H_

// A small dense/recurrent network kernel with layer-level reverse-mode
// differentiation.
//
// Activations are feature-major: a batch of B sequences of length T is a
// matrix with one row per feature and T*B columns, where columns
// [t*B, (t+1)*B) hold time step t. Feed-forward use is the T = 1 case.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace mprlab {
namespace nn {

enum class Activation { kIdentity, kRelu, kTanh };
enum class LayerKind { kDense, kLstm, kGru };

struct LayerSpec {
  LayerKind kind = LayerKind::kDense;
  int units = 0;
  Activation activation = Activation::kIdentity;

  static LayerSpec Dense(int units, Activation activation) {
    return {LayerKind::kDense, units, activation};
  }
  static LayerSpec Lstm(int units) { return {LayerKind::kLstm, units}; }
  static LayerSpec Gru(int units) { return {LayerKind::kGru, units}; }
};

struct Parameter {
  std::string name;
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
};

// Hidden (and, for LSTM, cell) state of one layer; empty for dense layers.
struct LayerState {
  Eigen::MatrixXd h;
  Eigen::MatrixXd c;
};
using RecurrentState = std::vector<LayerState>;

class Layer {
 public:
  virtual ~Layer() = default;

  virtual int input_dim() const = 0;
  virtual int output_dim() const = 0;
  virtual bool recurrent() const { return false; }

  // Training pass from a zero initial state; records what Backward needs.
  virtual Eigen::MatrixXd Forward(const Eigen::MatrixXd& x, int batch) = 0;
  // Accumulates parameter gradients and returns the input gradient.
  virtual Eigen::MatrixXd Backward(const Eigen::MatrixXd& dy) = 0;
  // Read-only pass. `state` (if given) seeds and receives the recurrent
  // state; null means a zero initial state.
  virtual Eigen::MatrixXd Infer(const Eigen::MatrixXd& x, int batch,
                                LayerState* state) const = 0;
  virtual LayerState ZeroState(int /*batch*/) const { return {}; }

  virtual std::vector<Parameter*> Parameters() = 0;
};

std::unique_ptr<Layer> MakeLayer(const LayerSpec& spec, int input_dim,
                                 const std::string& name, uint64_t seed);

// Optional extra input concatenated below the output of layer `after_layer`
// before it enters the next layer.
struct SideInput {
  int dim = 0;
  int after_layer = 0;
};

class Network {
 public:
  Network(int input_dim, std::vector<LayerSpec> layers, uint64_t seed,
          SideInput side = {});
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  int input_dim() const { return input_dim_; }
  int output_dim() const;
  int side_dim() const { return side_.dim; }
  uint64_t seed() const { return seed_; }
  const std::vector<LayerSpec>& specs() const { return specs_; }
  bool recurrent() const;

  Eigen::MatrixXd Forward(const Eigen::MatrixXd& x, int batch,
                          const Eigen::MatrixXd* side = nullptr);

  struct InputGradients {
    Eigen::MatrixXd input;
    Eigen::MatrixXd side;
  };
  // Requires a preceding Forward; consumes its record.
  InputGradients Backward(const Eigen::MatrixXd& output_grad);

  Eigen::MatrixXd Infer(const Eigen::MatrixXd& x, int batch,
                        const Eigen::MatrixXd* side = nullptr,
                        RecurrentState* state = nullptr) const;

  RecurrentState ZeroState(int batch) const;
  // Applies the layers after the last recurrent layer to that layer's
  // hidden state. Used for the output of an empty sequence.
  Eigen::MatrixXd OutputFromState(const RecurrentState& state) const;

  std::vector<Parameter*> Parameters();
  std::vector<const Parameter*> Parameters() const;
  int64_t ParameterCount() const;
  void ZeroGrad();
  void CopyParametersFrom(const Network& other);

 private:
  void Build();
  void CheckInput(const Eigen::MatrixXd& x, int batch,
                  const Eigen::MatrixXd* side) const;

  int input_dim_ = 0;
  std::vector<LayerSpec> specs_;
  uint64_t seed_ = 0;
  SideInput side_;
  std::vector<std::unique_ptr<Layer>> layers_;
  bool has_record_ = false;
};

// FNV-1a over parameter names, shapes and raw bytes.
uint64_t ParameterHash(const Network& network);

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  int64_t step = 0;
  std::vector<Eigen::MatrixXd> first_moment;
  std::vector<Eigen::MatrixXd> second_moment;
};

// One bias-corrected Adam update of every parameter from its grad. Throws
// before touching anything if a gradient is non-finite.
void AdamStep(AdamState& state, std::span<Parameter* const> params);

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config);
  void Step() { AdamStep(state_, params_); }
  const AdamState& state() const { return state_; }
  int64_t step_count() const { return state_.step; }

 private:
  std::vector<Parameter*> params_;
  AdamState state_;
};

// Rescales gradients so their global L2 norm is at most max_norm. Returns
// the norm before clipping.
double ClipGradNorm(std::span<Parameter* const> params, double max_norm);

struct Checkpoint {
  uint64_t seed = 0;
  int64_t step = 0;
  std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;
};

// Text format with hexadecimal floats, so values round-trip bit-exactly.
void SaveCheckpoint(const Checkpoint& checkpoint, std::ostream& out);
Checkpoint LoadCheckpoint(std::istream& in);
Checkpoint MakeCheckpoint(const Network& network, int64_t step);
void RestoreCheckpoint(const Checkpoint& checkpoint, Network& network);

}  // namespace nn
}  // namespace mprlab

#endif  // MPRLAB_NN_H_
