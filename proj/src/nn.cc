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

#include "mprlab/nn.h"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <sstream>

#include "mprlab/common.h"

namespace mprlab {
namespace nn {
namespace {

using Eigen::MatrixXd;

MatrixXd UniformMatrix(Rng& rng, int rows, int cols, double bound) {
  MatrixXd m(rows, cols);
  // Fill in a fixed order so initialization is reproducible.
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = Uniform(rng, -bound, bound);
  return m;
}

Parameter MakeParameter(const std::string& name, MatrixXd value) {
  Parameter p;
  p.name = name;
  p.grad = MatrixXd::Zero(value.rows(), value.cols());
  p.value = std::move(value);
  return p;
}

MatrixXd Sigmoid(const MatrixXd& z) {
  return (1.0 / (1.0 + (-z.array()).exp())).matrix();
}

MatrixXd Activate(const MatrixXd& z, Activation activation) {
  switch (activation) {
    case Activation::kRelu:
      return z.cwiseMax(0.0);
    case Activation::kTanh:
      return z.array().tanh().matrix();
    case Activation::kIdentity:
      break;
  }
  return z;
}

// Derivative expressed through the activation output.
MatrixXd ActivationGrad(const MatrixXd& y, const MatrixXd& dy,
                        Activation activation) {
  switch (activation) {
    case Activation::kRelu:
      return (y.array() > 0.0).select(dy, 0.0);
    case Activation::kTanh:
      return (dy.array() * (1.0 - y.array().square())).matrix();
    case Activation::kIdentity:
      break;
  }
  return dy;
}

class DenseLayer : public Layer {
 public:
  DenseLayer(int input_dim, int units, Activation activation,
             const std::string& name, Rng& rng)
      : activation_(activation) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(input_dim));
    weight_ = MakeParameter(name + ".weight",
                            UniformMatrix(rng, units, input_dim, bound));
    bias_ = MakeParameter(name + ".bias", UniformMatrix(rng, units, 1, bound));
  }

  int input_dim() const override { return static_cast<int>(weight_.value.cols()); }
  int output_dim() const override { return static_cast<int>(weight_.value.rows()); }

  MatrixXd Forward(const MatrixXd& x, int) override {
    input_ = x;
    output_ = Infer(x, 0, nullptr);
    return output_;
  }

  MatrixXd Backward(const MatrixXd& dy) override {
    const MatrixXd dz = ActivationGrad(output_, dy, activation_);
    weight_.grad.noalias() += dz * input_.transpose();
    bias_.grad += dz.rowwise().sum();
    return weight_.value.transpose() * dz;
  }

  MatrixXd Infer(const MatrixXd& x, int, LayerState*) const override {
    MatrixXd z = weight_.value * x;
    z.colwise() += bias_.value.col(0);
    return Activate(z, activation_);
  }

  std::vector<Parameter*> Parameters() override { return {&weight_, &bias_}; }

 private:
  Activation activation_;
  Parameter weight_;
  Parameter bias_;
  MatrixXd input_;
  MatrixXd output_;
};

// Gate rows are ordered input, forget, cell, output.
class LstmLayer : public Layer {
 public:
  LstmLayer(int input_dim, int units, const std::string& name, Rng& rng)
      : units_(units) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(units));
    w_input_ = MakeParameter(name + ".w_input",
                             UniformMatrix(rng, 4 * units, input_dim, bound));
    w_hidden_ = MakeParameter(name + ".w_hidden",
                              UniformMatrix(rng, 4 * units, units, bound));
    bias_ = MakeParameter(name + ".bias", UniformMatrix(rng, 4 * units, 1, bound));
  }

  int input_dim() const override { return static_cast<int>(w_input_.value.cols()); }
  int output_dim() const override { return units_; }
  bool recurrent() const override { return true; }

  LayerState ZeroState(int batch) const override {
    return {MatrixXd::Zero(units_, batch), MatrixXd::Zero(units_, batch)};
  }

  MatrixXd Forward(const MatrixXd& x, int batch) override {
    record_ = Record{};
    record_.input = x;
    record_.batch = batch;
    return Run(x, batch, nullptr, &record_);
  }

  MatrixXd Infer(const MatrixXd& x, int batch, LayerState* state) const override {
    return Run(x, batch, state, nullptr);
  }

  MatrixXd Backward(const MatrixXd& dy) override {
    const int h = units_;
    const int b = record_.batch;
    const int steps = static_cast<int>(dy.cols()) / b;
    MatrixXd dz_all(4 * h, dy.cols());
    MatrixXd dh_next = MatrixXd::Zero(h, b);
    MatrixXd dc_next = MatrixXd::Zero(h, b);
    for (int t = steps - 1; t >= 0; --t) {
      const auto cols = [&](const MatrixXd& m) { return m.middleCols(t * b, b); };
      const MatrixXd i = cols(record_.gate_i);
      const MatrixXd f = cols(record_.gate_f);
      const MatrixXd g = cols(record_.gate_g);
      const MatrixXd o = cols(record_.gate_o);
      const MatrixXd tanh_c = cols(record_.tanh_c);
      const MatrixXd c_prev = cols(record_.c_prev);
      const MatrixXd dh = dy.middleCols(t * b, b) + dh_next;
      const MatrixXd dc =
          (dh.array() * o.array() * (1.0 - tanh_c.array().square()) +
           dc_next.array()).matrix();
      auto dz = dz_all.middleCols(t * b, b);
      dz.topRows(h) = (dc.array() * g.array() * i.array() * (1.0 - i.array())).matrix();
      dz.middleRows(h, h) =
          (dc.array() * c_prev.array() * f.array() * (1.0 - f.array())).matrix();
      dz.middleRows(2 * h, h) =
          (dc.array() * i.array() * (1.0 - g.array().square())).matrix();
      dz.bottomRows(h) =
          (dh.array() * tanh_c.array() * o.array() * (1.0 - o.array())).matrix();
      w_hidden_.grad.noalias() += dz * cols(record_.h_prev).transpose();
      dh_next.noalias() = w_hidden_.value.transpose() * dz;
      dc_next = (dc.array() * f.array()).matrix();
    }
    w_input_.grad.noalias() += dz_all * record_.input.transpose();
    bias_.grad += dz_all.rowwise().sum();
    return w_input_.value.transpose() * dz_all;
  }

  std::vector<Parameter*> Parameters() override {
    return {&w_input_, &w_hidden_, &bias_};
  }

 private:
  struct Record {
    MatrixXd input, gate_i, gate_f, gate_g, gate_o, tanh_c, c_prev, h_prev;
    int batch = 0;
  };

  MatrixXd Run(const MatrixXd& x, int batch, LayerState* state,
               Record* record) const {
    const int h = units_;
    const Eigen::Index n = x.cols();
    const int steps = static_cast<int>(n / batch);
    MatrixXd projected = w_input_.value * x;
    projected.colwise() += bias_.value.col(0);
    MatrixXd h_t = state ? state->h : MatrixXd::Zero(h, batch);
    MatrixXd c_t = state ? state->c : MatrixXd::Zero(h, batch);
    MatrixXd out(h, n);
    if (record) {
      for (MatrixXd* m : {&record->gate_i, &record->gate_f, &record->gate_g,
                          &record->gate_o, &record->tanh_c, &record->c_prev,
                          &record->h_prev}) {
        m->resize(h, n);
      }
    }
    for (int t = 0; t < steps; ++t) {
      MatrixXd z = projected.middleCols(t * batch, batch);
      z.noalias() += w_hidden_.value * h_t;
      const MatrixXd i = Sigmoid(z.topRows(h));
      const MatrixXd f = Sigmoid(z.middleRows(h, h));
      const MatrixXd g = z.middleRows(2 * h, h).array().tanh().matrix();
      const MatrixXd o = Sigmoid(z.bottomRows(h));
      if (record) {
        record->c_prev.middleCols(t * batch, batch) = c_t;
        record->h_prev.middleCols(t * batch, batch) = h_t;
      }
      c_t = (f.array() * c_t.array() + i.array() * g.array()).matrix();
      const MatrixXd tanh_c = c_t.array().tanh().matrix();
      h_t = (o.array() * tanh_c.array()).matrix();
      out.middleCols(t * batch, batch) = h_t;
      if (record) {
        record->gate_i.middleCols(t * batch, batch) = i;
        record->gate_f.middleCols(t * batch, batch) = f;
        record->gate_g.middleCols(t * batch, batch) = g;
        record->gate_o.middleCols(t * batch, batch) = o;
        record->tanh_c.middleCols(t * batch, batch) = tanh_c;
      }
    }
    if (state) {
      state->h = h_t;
      state->c = c_t;
    }
    return out;
  }

  int units_;
  Parameter w_input_;
  Parameter w_hidden_;
  Parameter bias_;
  Record record_;
};

// Gate rows are ordered reset, update, candidate; the reset gate scales the
// hidden projection of the candidate (the cuDNN/PyTorch convention).
class GruLayer : public Layer {
 public:
  GruLayer(int input_dim, int units, const std::string& name, Rng& rng)
      : units_(units) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(units));
    w_input_ = MakeParameter(name + ".w_input",
                             UniformMatrix(rng, 3 * units, input_dim, bound));
    w_hidden_ = MakeParameter(name + ".w_hidden",
                              UniformMatrix(rng, 3 * units, units, bound));
    b_input_ = MakeParameter(name + ".b_input",
                             UniformMatrix(rng, 3 * units, 1, bound));
    b_hidden_ = MakeParameter(name + ".b_hidden",
                              UniformMatrix(rng, 3 * units, 1, bound));
  }

  int input_dim() const override { return static_cast<int>(w_input_.value.cols()); }
  int output_dim() const override { return units_; }
  bool recurrent() const override { return true; }

  LayerState ZeroState(int batch) const override {
    return {MatrixXd::Zero(units_, batch), MatrixXd()};
  }

  MatrixXd Forward(const MatrixXd& x, int batch) override {
    record_ = Record{};
    record_.input = x;
    record_.batch = batch;
    return Run(x, batch, nullptr, &record_);
  }

  MatrixXd Infer(const MatrixXd& x, int batch, LayerState* state) const override {
    return Run(x, batch, state, nullptr);
  }

  MatrixXd Backward(const MatrixXd& dy) override {
    const int h = units_;
    const int b = record_.batch;
    const int steps = static_cast<int>(dy.cols()) / b;
    MatrixXd dx_pre(3 * h, dy.cols());
    MatrixXd dh_next = MatrixXd::Zero(h, b);
    for (int t = steps - 1; t >= 0; --t) {
      const auto cols = [&](const MatrixXd& m) { return m.middleCols(t * b, b); };
      const MatrixXd r = cols(record_.gate_r);
      const MatrixXd z = cols(record_.gate_z);
      const MatrixXd n = cols(record_.gate_n);
      const MatrixXd hidden_n = cols(record_.hidden_n);
      const MatrixXd h_prev = cols(record_.h_prev);
      const MatrixXd dh = dy.middleCols(t * b, b) + dh_next;
      const MatrixXd dn_pre =
          (dh.array() * (1.0 - z.array()) * (1.0 - n.array().square())).matrix();
      const MatrixXd dz_pre = (dh.array() * (h_prev.array() - n.array()) *
                               z.array() * (1.0 - z.array())).matrix();
      const MatrixXd dr_pre = (dn_pre.array() * hidden_n.array() * r.array() *
                               (1.0 - r.array())).matrix();
      auto dx = dx_pre.middleCols(t * b, b);
      dx.topRows(h) = dr_pre;
      dx.middleRows(h, h) = dz_pre;
      dx.bottomRows(h) = dn_pre;
      MatrixXd dh_pre(3 * h, b);
      dh_pre.topRows(h) = dr_pre;
      dh_pre.middleRows(h, h) = dz_pre;
      dh_pre.bottomRows(h) = (dn_pre.array() * r.array()).matrix();
      w_hidden_.grad.noalias() += dh_pre * h_prev.transpose();
      b_hidden_.grad += dh_pre.rowwise().sum();
      dh_next = (dh.array() * z.array()).matrix();
      dh_next.noalias() += w_hidden_.value.transpose() * dh_pre;
    }
    w_input_.grad.noalias() += dx_pre * record_.input.transpose();
    b_input_.grad += dx_pre.rowwise().sum();
    return w_input_.value.transpose() * dx_pre;
  }

  std::vector<Parameter*> Parameters() override {
    return {&w_input_, &w_hidden_, &b_input_, &b_hidden_};
  }

 private:
  struct Record {
    MatrixXd input, gate_r, gate_z, gate_n, hidden_n, h_prev;
    int batch = 0;
  };

  MatrixXd Run(const MatrixXd& x, int batch, LayerState* state,
               Record* record) const {
    const int h = units_;
    const Eigen::Index n = x.cols();
    const int steps = static_cast<int>(n / batch);
    MatrixXd projected = w_input_.value * x;
    projected.colwise() += b_input_.value.col(0);
    MatrixXd h_t = state ? state->h : MatrixXd::Zero(h, batch);
    MatrixXd out(h, n);
    if (record) {
      for (MatrixXd* m : {&record->gate_r, &record->gate_z, &record->gate_n,
                          &record->hidden_n, &record->h_prev}) {
        m->resize(h, n);
      }
    }
    for (int t = 0; t < steps; ++t) {
      const auto xp = projected.middleCols(t * batch, batch);
      MatrixXd hp = w_hidden_.value * h_t;
      hp.colwise() += b_hidden_.value.col(0);
      const MatrixXd r = Sigmoid(xp.topRows(h) + hp.topRows(h));
      const MatrixXd z = Sigmoid(xp.middleRows(h, h) + hp.middleRows(h, h));
      const MatrixXd candidate =
          (xp.bottomRows(h).array() + r.array() * hp.bottomRows(h).array())
              .tanh()
              .matrix();
      if (record) {
        record->gate_r.middleCols(t * batch, batch) = r;
        record->gate_z.middleCols(t * batch, batch) = z;
        record->gate_n.middleCols(t * batch, batch) = candidate;
        record->hidden_n.middleCols(t * batch, batch) = hp.bottomRows(h);
        record->h_prev.middleCols(t * batch, batch) = h_t;
      }
      h_t = ((1.0 - z.array()) * candidate.array() + z.array() * h_t.array())
                .matrix();
      out.middleCols(t * batch, batch) = h_t;
    }
    if (state) state->h = h_t;
    return out;
  }

  int units_;
  Parameter w_input_;
  Parameter w_hidden_;
  Parameter b_input_;
  Parameter b_hidden_;
  Record record_;
};

void WriteHexDouble(std::ostream& out, double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%a", v);
  out << buffer;
}

}  // namespace

std::unique_ptr<Layer> MakeLayer(const LayerSpec& spec, int input_dim,
                                 const std::string& name, uint64_t seed) {
  Check(spec.units > 0, "layer units must be positive");
  Check(input_dim > 0, "layer input dimension must be positive");
  Rng rng(seed);
  switch (spec.kind) {
    case LayerKind::kDense:
      return std::make_unique<DenseLayer>(input_dim, spec.units,
                                          spec.activation, name, rng);
    case LayerKind::kLstm:
      return std::make_unique<LstmLayer>(input_dim, spec.units, name, rng);
    case LayerKind::kGru:
      return std::make_unique<GruLayer>(input_dim, spec.units, name, rng);
  }
  Fail("unknown layer kind");
}

Network::Network(int input_dim, std::vector<LayerSpec> layers, uint64_t seed,
                 SideInput side)
    : input_dim_(input_dim), specs_(std::move(layers)), seed_(seed),
      side_(side) {
  Build();
}

Network::Network(const Network& other)
    : input_dim_(other.input_dim_), specs_(other.specs_), seed_(other.seed_),
      side_(other.side_) {
  Build();
  CopyParametersFrom(other);
}

Network& Network::operator=(const Network& other) {
  if (this == &other) return *this;
  input_dim_ = other.input_dim_;
  specs_ = other.specs_;
  seed_ = other.seed_;
  side_ = other.side_;
  Build();
  CopyParametersFrom(other);
  return *this;
}

void Network::Build() {
  Check(input_dim_ > 0, "network input dimension must be positive");
  Check(!specs_.empty(), "network needs at least one layer");
  if (side_.dim > 0) {
    Check(side_.after_layer >= 0 &&
              side_.after_layer + 1 < static_cast<int>(specs_.size()),
          "side input must enter before the last layer");
  }
  layers_.clear();
  int dim = input_dim_;
  for (size_t k = 0; k < specs_.size(); ++k) {
    layers_.push_back(MakeLayer(specs_[k], dim, "layer" + std::to_string(k),
                                DeriveSeed(seed_, k)));
    dim = specs_[k].units;
    if (side_.dim > 0 && static_cast<int>(k) == side_.after_layer) {
      dim += side_.dim;
    }
  }
  has_record_ = false;
}

int Network::output_dim() const { return specs_.back().units; }

bool Network::recurrent() const {
  for (const auto& layer : layers_)
    if (layer->recurrent()) return true;
  return false;
}

void Network::CheckInput(const Eigen::MatrixXd& x, int batch,
                         const Eigen::MatrixXd* side) const {
  Check(batch > 0, "batch must be positive");
  Check(x.rows() == input_dim_,
        "network input has " + std::to_string(x.rows()) + " features, expected " +
            std::to_string(input_dim_));
  Check(x.cols() % batch == 0, "input columns must be a multiple of batch");
  if (side_.dim > 0) {
    Check(side != nullptr, "network expects a side input");
    Check(side->rows() == side_.dim && side->cols() == x.cols(),
          "side input shape mismatch");
  } else {
    Check(side == nullptr, "network has no side input");
  }
}

Eigen::MatrixXd Network::Forward(const Eigen::MatrixXd& x, int batch,
                                 const Eigen::MatrixXd* side) {
  CheckInput(x, batch, side);
  Eigen::MatrixXd a = x;
  for (size_t k = 0; k < layers_.size(); ++k) {
    a = layers_[k]->Forward(a, batch);
    if (side_.dim > 0 && static_cast<int>(k) == side_.after_layer) {
      Eigen::MatrixXd joined(a.rows() + side_.dim, a.cols());
      joined << a, *side;
      a = std::move(joined);
    }
  }
  has_record_ = true;
  return a;
}

Network::InputGradients Network::Backward(const Eigen::MatrixXd& output_grad) {
  Check(has_record_, "Backward called without a recorded Forward pass");
  Check(output_grad.rows() == output_dim(), "output gradient shape mismatch");
  InputGradients grads;
  Eigen::MatrixXd d = output_grad;
  for (int k = static_cast<int>(layers_.size()) - 1; k >= 0; --k) {
    if (side_.dim > 0 && k == side_.after_layer) {
      grads.side = d.bottomRows(side_.dim);
      d = d.topRows(d.rows() - side_.dim).eval();
    }
    d = layers_[k]->Backward(d);
  }
  grads.input = std::move(d);
  has_record_ = false;
  return grads;
}

Eigen::MatrixXd Network::Infer(const Eigen::MatrixXd& x, int batch,
                               const Eigen::MatrixXd* side,
                               RecurrentState* state) const {
  CheckInput(x, batch, side);
  if (state) {
    Check(state->size() == layers_.size(), "recurrent state has wrong arity");
  }
  Eigen::MatrixXd a = x;
  for (size_t k = 0; k < layers_.size(); ++k) {
    LayerState* slot = (state && layers_[k]->recurrent()) ? &(*state)[k] : nullptr;
    a = layers_[k]->Infer(a, batch, slot);
    if (side_.dim > 0 && static_cast<int>(k) == side_.after_layer) {
      Eigen::MatrixXd joined(a.rows() + side_.dim, a.cols());
      joined << a, *side;
      a = std::move(joined);
    }
  }
  return a;
}

RecurrentState Network::ZeroState(int batch) const {
  RecurrentState state;
  for (const auto& layer : layers_) state.push_back(layer->ZeroState(batch));
  return state;
}

Eigen::MatrixXd Network::OutputFromState(const RecurrentState& state) const {
  Check(state.size() == layers_.size(), "recurrent state has wrong arity");
  int last = -1;
  for (int k = 0; k < static_cast<int>(layers_.size()); ++k) {
    if (layers_[k]->recurrent()) last = k;
  }
  Check(last >= 0, "OutputFromState needs a recurrent layer");
  Check(side_.dim == 0 || side_.after_layer < last,
        "OutputFromState cannot supply a side input");
  Eigen::MatrixXd a = state[last].h;
  const int batch = static_cast<int>(a.cols());
  for (size_t k = last + 1; k < layers_.size(); ++k) {
    a = layers_[k]->Infer(a, batch, nullptr);
  }
  return a;
}

std::vector<Parameter*> Network::Parameters() {
  std::vector<Parameter*> params;
  for (auto& layer : layers_) {
    for (Parameter* p : layer->Parameters()) params.push_back(p);
  }
  return params;
}

std::vector<const Parameter*> Network::Parameters() const {
  std::vector<const Parameter*> params;
  for (auto& layer : layers_) {
    for (Parameter* p : layer->Parameters()) params.push_back(p);
  }
  return params;
}

int64_t Network::ParameterCount() const {
  int64_t count = 0;
  for (const Parameter* p : Parameters()) count += p->value.size();
  return count;
}

void Network::ZeroGrad() {
  for (Parameter* p : Parameters()) p->grad.setZero();
}

void Network::CopyParametersFrom(const Network& other) {
  auto mine = Parameters();
  auto theirs = other.Parameters();
  Check(mine.size() == theirs.size(), "parameter lists differ");
  for (size_t k = 0; k < mine.size(); ++k) {
    Check(mine[k]->value.rows() == theirs[k]->value.rows() &&
              mine[k]->value.cols() == theirs[k]->value.cols(),
          "parameter shapes differ");
    mine[k]->value = theirs[k]->value;
  }
}

uint64_t ParameterHash(const Network& network) {
  uint64_t hash = 0xcbf29ce484222325ULL;
  auto mix = [&hash](const void* data, size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < size; ++i) {
      hash ^= bytes[i];
      hash *= 0x100000001b3ULL;
    }
  };
  for (const Parameter* p : network.Parameters()) {
    mix(p->name.data(), p->name.size());
    const Eigen::Index shape[2] = {p->value.rows(), p->value.cols()};
    mix(shape, sizeof(shape));
    mix(p->value.data(), sizeof(double) * p->value.size());
  }
  return hash;
}

void AdamStep(AdamState& state, std::span<Parameter* const> params) {
  if (state.first_moment.empty()) {
    for (const Parameter* p : params) {
      state.first_moment.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
      state.second_moment.push_back(Eigen::MatrixXd::Zero(p->value.rows(), p->value.cols()));
    }
  }
  Check(state.first_moment.size() == params.size(),
        "Adam state tracks a different parameter list");
  for (size_t k = 0; k < params.size(); ++k) {
    const Parameter* p = params[k];
    Check(p->grad.rows() == p->value.rows() && p->grad.cols() == p->value.cols() &&
              state.first_moment[k].rows() == p->value.rows() &&
              state.first_moment[k].cols() == p->value.cols(),
          "Adam: shape mismatch for " + p->name);
    Check(p->grad.allFinite(), "Adam: non-finite gradient in " + p->name);
  }
  const AdamConfig& c = state.config;
  ++state.step;
  const double correction1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double correction2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  for (size_t k = 0; k < params.size(); ++k) {
    Parameter* p = params[k];
    auto& m = state.first_moment[k];
    auto& v = state.second_moment[k];
    m = c.beta1 * m + (1.0 - c.beta1) * p->grad;
    v = c.beta2 * v + (1.0 - c.beta2) * p->grad.cwiseProduct(p->grad);
    p->value.array() -= c.learning_rate * (m.array() / correction1) /
                        ((v.array() / correction2).sqrt() + c.epsilon);
  }
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig config)
    : params_(std::move(params)) {
  state_.config = config;
}

double ClipGradNorm(std::span<Parameter* const> params, double max_norm) {
  double squared = 0.0;
  for (const Parameter* p : params) squared += p->grad.squaredNorm();
  const double norm = std::sqrt(squared);
  if (norm > max_norm && norm > 0.0) {
    const double scale = max_norm / norm;
    for (Parameter* p : params) p->grad *= scale;
  }
  return norm;
}

void SaveCheckpoint(const Checkpoint& checkpoint, std::ostream& out) {
  out << "mprlab-checkpoint 1\n";
  out << "seed " << checkpoint.seed << "\n";
  out << "step " << checkpoint.step << "\n";
  out << "tensors " << checkpoint.tensors.size() << "\n";
  for (const auto& [name, value] : checkpoint.tensors) {
    out << "tensor " << name << ' ' << value.rows() << ' ' << value.cols() << "\n";
    for (Eigen::Index k = 0; k < value.size(); ++k) {
      if (k > 0) out << ' ';
      WriteHexDouble(out, value.data()[k]);
    }
    out << "\n";
  }
}

Checkpoint LoadCheckpoint(std::istream& in) {
  auto expect = [&in](const std::string& word) {
    std::string token;
    in >> token;
    Check(static_cast<bool>(in) && token == word,
          "checkpoint: expected '" + word + "'");
  };
  expect("mprlab-checkpoint");
  int version = 0;
  in >> version;
  Check(version == 1, "checkpoint: unsupported version");
  Checkpoint checkpoint;
  expect("seed");
  in >> checkpoint.seed;
  expect("step");
  in >> checkpoint.step;
  expect("tensors");
  size_t count = 0;
  in >> count;
  Check(static_cast<bool>(in), "checkpoint: malformed header");
  for (size_t t = 0; t < count; ++t) {
    expect("tensor");
    std::string name;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    in >> name >> rows >> cols;
    Check(static_cast<bool>(in) && rows >= 0 && cols >= 0,
          "checkpoint: malformed tensor header");
    Eigen::MatrixXd value(rows, cols);
    std::string token;
    for (Eigen::Index k = 0; k < value.size(); ++k) {
      in >> token;
      Check(static_cast<bool>(in), "checkpoint: truncated tensor " + name);
      char* end = nullptr;
      value.data()[k] = std::strtod(token.c_str(), &end);
      Check(end != nullptr && *end == '\0', "checkpoint: bad number " + token);
    }
    checkpoint.tensors.emplace_back(name, std::move(value));
  }
  return checkpoint;
}

Checkpoint MakeCheckpoint(const Network& network, int64_t step) {
  Checkpoint checkpoint;
  checkpoint.seed = network.seed();
  checkpoint.step = step;
  for (const Parameter* p : network.Parameters()) {
    checkpoint.tensors.emplace_back(p->name, p->value);
  }
  return checkpoint;
}

void RestoreCheckpoint(const Checkpoint& checkpoint, Network& network) {
  auto params = network.Parameters();
  Check(params.size() == checkpoint.tensors.size(),
        "checkpoint has a different number of tensors");
  for (size_t k = 0; k < params.size(); ++k) {
    const auto& [name, value] = checkpoint.tensors[k];
    Check(name == params[k]->name, "checkpoint tensor " + name +
                                       " does not match " + params[k]->name);
    Check(value.rows() == params[k]->value.rows() &&
              value.cols() == params[k]->value.cols(),
          "checkpoint tensor " + name + " has the wrong shape");
    params[k]->value = value;
  }
}

}  // namespace nn
}  // namespace mprlab
