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
#include <limits>
#include <sstream>

#include "doctest.h"
#include "gradcheck.h"
#include "mprlab/common.h"

namespace mprlab {
namespace nn {
namespace {

Eigen::MatrixXd RandomMatrix(Rng& rng, int rows, int cols, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = scale * StandardNormal(rng);
  return m;
}

// Loss = sum(weights .* output) with fixed random weights.
struct LinearProbe {
  Eigen::MatrixXd weights;
  double operator()(const Eigen::MatrixXd& out) const {
    return (weights.array() * out.array()).sum();
  }
};

double NetworkGradientError(Network& net, const Eigen::MatrixXd& x, int batch,
                            const Eigen::MatrixXd* side, Rng& rng) {
  LinearProbe probe{RandomMatrix(rng, net.output_dim(), x.cols())};
  auto loss = [&]() { return probe(net.Infer(x, batch, side)); };
  auto analytic = [&]() {
    net.Forward(x, batch, side);
    net.Backward(probe.weights);
  };
  return testing::MaxParameterGradientError(net.Parameters(), loss, analytic);
}

TEST_CASE("identity dense layer passes input through") {
  Network net(3, {LayerSpec::Dense(3, Activation::kIdentity)}, 1);
  auto params = net.Parameters();
  params[0]->value = Eigen::MatrixXd::Identity(3, 3);
  params[1]->value.setZero();
  Eigen::MatrixXd x(3, 2);
  x << 1, -2, 3, 4, -5, 6;
  CHECK(net.Infer(x, 2) == x);
  CHECK(net.Forward(x, 2) == x);
}

TEST_CASE("zero-weight networks produce zero") {
  for (Activation a : {Activation::kRelu, Activation::kTanh, Activation::kIdentity}) {
    Network net(4, {LayerSpec::Dense(8, a), LayerSpec::Dense(2, a)}, 3);
    for (Parameter* p : net.Parameters()) p->value.setZero();
    Rng rng(1);
    CHECK(net.Infer(RandomMatrix(rng, 4, 5), 5).isZero(0.0));
  }
}

TEST_CASE("two-layer tanh MLP matches a scalar re-evaluation") {
  Network net(3, {LayerSpec::Dense(4, Activation::kTanh),
                  LayerSpec::Dense(2, Activation::kTanh)},
              99);
  Rng rng(2);
  const Eigen::MatrixXd x = RandomMatrix(rng, 3, 6);
  const Eigen::MatrixXd out = net.Infer(x, 6);
  auto p = net.Parameters();
  for (int col = 0; col < 6; ++col) {
    double hidden[4];
    for (int i = 0; i < 4; ++i) {
      double z = p[1]->value(i, 0);
      for (int j = 0; j < 3; ++j) z += p[0]->value(i, j) * x(j, col);
      hidden[i] = std::tanh(z);
    }
    for (int i = 0; i < 2; ++i) {
      double z = p[3]->value(i, 0);
      for (int j = 0; j < 4; ++j) z += p[2]->value(i, j) * hidden[j];
      CHECK(out(i, col) == doctest::Approx(std::tanh(z)).epsilon(1e-14));
    }
  }
}

TEST_CASE("linear layer weight gradient is the outer product with the input") {
  Network net(3, {LayerSpec::Dense(2, Activation::kIdentity)}, 5);
  Eigen::MatrixXd x(3, 1);
  x << 0.5, -1.0, 2.0;
  net.ZeroGrad();
  net.Forward(x, 1);
  net.Backward(Eigen::MatrixXd::Ones(2, 1));
  auto p = net.Parameters();
  CHECK(p[0]->grad == Eigen::MatrixXd::Ones(2, 1) * x.transpose());
  CHECK(p[1]->grad == Eigen::MatrixXd::Ones(2, 1));
}

TEST_CASE("constant loss yields zero gradients") {
  Network net(3, {LayerSpec::Lstm(4), LayerSpec::Dense(2, Activation::kTanh)}, 5);
  Rng rng(3);
  net.ZeroGrad();
  const auto x = RandomMatrix(rng, 3, 8);
  net.Forward(x, 2);
  auto grads = net.Backward(Eigen::MatrixXd::Zero(2, 8));
  for (const Parameter* p : net.Parameters()) CHECK(p->grad.isZero(0.0));
  CHECK(grads.input.isZero(0.0));
}

TEST_CASE("backward without forward and shape errors") {
  Network net(3, {LayerSpec::Dense(2, Activation::kRelu)}, 5);
  CHECK_THROWS_AS(net.Backward(Eigen::MatrixXd::Zero(2, 1)), Error);
  net.Forward(Eigen::MatrixXd::Zero(3, 1), 1);
  net.Backward(Eigen::MatrixXd::Zero(2, 1));
  CHECK_THROWS_AS(net.Backward(Eigen::MatrixXd::Zero(2, 1)), Error);
  CHECK_THROWS_AS(net.Infer(Eigen::MatrixXd::Zero(4, 1), 1), Error);
  CHECK_THROWS_AS(net.Infer(Eigen::MatrixXd::Zero(3, 3), 2), Error);
}

TEST_CASE("gradient check for every layer kind") {
  Rng rng(11);
  SUBCASE("dense") {
    for (Activation a : {Activation::kRelu, Activation::kTanh, Activation::kIdentity}) {
      Network net(5, {LayerSpec::Dense(7, a), LayerSpec::Dense(3, a)}, 17);
      const auto x = RandomMatrix(rng, 5, 4);
      CHECK(NetworkGradientError(net, x, 4, nullptr, rng) < 1e-4);
    }
  }
  SUBCASE("lstm through time") {
    for (int steps = 1; steps <= 8; ++steps) {
      Network net(3, {LayerSpec::Lstm(5), LayerSpec::Lstm(4),
                      LayerSpec::Dense(2, Activation::kIdentity)},
                  steps);
      const auto x = RandomMatrix(rng, 3, steps * 2);
      CHECK(NetworkGradientError(net, x, 2, nullptr, rng) < 1e-4);
    }
  }
  SUBCASE("gru through time") {
    for (int steps = 1; steps <= 8; ++steps) {
      Network net(3, {LayerSpec::Gru(5), LayerSpec::Dense(4, Activation::kTanh)},
                  100 + steps);
      const auto x = RandomMatrix(rng, 3, steps * 3);
      CHECK(NetworkGradientError(net, x, 3, nullptr, rng) < 1e-4);
    }
  }
  SUBCASE("side input injection") {
    Network net(4, {LayerSpec::Dense(6, Activation::kTanh),
                    LayerSpec::Dense(5, Activation::kRelu),
                    LayerSpec::Dense(2, Activation::kIdentity)},
                23, SideInput{3, 0});
    const auto x = RandomMatrix(rng, 4, 5);
    const auto side = RandomMatrix(rng, 3, 5);
    CHECK(NetworkGradientError(net, x, 5, &side, rng) < 1e-4);

    // Gradient with respect to the side input itself.
    LinearProbe probe{RandomMatrix(rng, 2, 5)};
    net.Forward(x, 5, &side);
    const auto grads = net.Backward(probe.weights);
    Eigen::MatrixXd side_copy = side;
    const auto numeric = testing::NumericGradient(
        side_copy, [&]() { return probe(net.Infer(x, 5, &side_copy)); });
    CHECK(testing::RelativeError(grads.side, numeric) < 1e-4);
    Eigen::MatrixXd x_copy = x;
    const auto numeric_x = testing::NumericGradient(
        x_copy, [&]() { return probe(net.Infer(x_copy, 5, &side)); });
    CHECK(testing::RelativeError(grads.input, numeric_x) < 1e-4);
  }
}

TEST_CASE("incremental inference matches the full sequence") {
  Rng rng(4);
  for (LayerSpec rec : {LayerSpec::Lstm(6), LayerSpec::Gru(6)}) {
    Network net(3, {rec, LayerSpec::Dense(2, Activation::kTanh)}, 8);
    const int steps = 5;
    const int batch = 2;
    const auto x = RandomMatrix(rng, 3, steps * batch);
    const auto full = net.Infer(x, batch);
    auto recorded = net.Forward(x, batch);
    CHECK(recorded.isApprox(full, 1e-15));
    auto state = net.ZeroState(batch);
    for (int t = 0; t < steps; ++t) {
      const auto out = net.Infer(x.middleCols(t * batch, batch), batch, nullptr, &state);
      CHECK(out.isApprox(full.middleCols(t * batch, batch), 1e-13));
      CHECK(net.OutputFromState(state).isApprox(out, 1e-13));
    }
  }
}

TEST_CASE("initialization is seeded and copies are independent") {
  Network a(4, {LayerSpec::Lstm(8), LayerSpec::Dense(3, Activation::kTanh)}, 42);
  Network b(4, {LayerSpec::Lstm(8), LayerSpec::Dense(3, Activation::kTanh)}, 42);
  Network c(4, {LayerSpec::Lstm(8), LayerSpec::Dense(3, Activation::kTanh)}, 43);
  CHECK(ParameterHash(a) == ParameterHash(b));
  CHECK(ParameterHash(a) != ParameterHash(c));
  CHECK(a.ParameterCount() == 4 * 8 * (4 + 8 + 1) + 3 * 8 + 3);
  Network copy = a;
  CHECK(ParameterHash(copy) == ParameterHash(a));
  copy.Parameters()[0]->value(0, 0) += 1.0;
  CHECK(ParameterHash(copy) != ParameterHash(a));
}

TEST_CASE("Adam arithmetic") {
  Parameter p{"x", Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::MatrixXd::Zero(1, 1)};
  std::vector<Parameter*> params = {&p};
  AdamState state;
  state.config.learning_rate = 0.01;
  AdamStep(state, params);
  CHECK(p.value(0, 0) == 2.0);  // zero gradient leaves the parameter alone
  CHECK(state.step == 1);

  Parameter q{"y", Eigen::MatrixXd::Constant(1, 1, 2.0), Eigen::MatrixXd::Ones(1, 1)};
  std::vector<Parameter*> qs = {&q};
  AdamState fresh;
  fresh.config.learning_rate = 0.01;
  AdamStep(fresh, qs);
  // m_hat / sqrt(v_hat) = 1 on the first step.
  CHECK(q.value(0, 0) == doctest::Approx(2.0 - 0.01 / (1.0 + 1e-8)).epsilon(1e-15));
  for (int k = 0; k < 10; ++k) AdamStep(fresh, qs);
  CHECK(q.value(0, 0) == doctest::Approx(2.0 - 11 * 0.01).epsilon(1e-6));
}

TEST_CASE("Adam rejects non-finite gradients without updating") {
  Parameter p{"x", Eigen::MatrixXd::Ones(2, 1), Eigen::MatrixXd::Ones(2, 1)};
  p.grad(1, 0) = std::numeric_limits<double>::quiet_NaN();
  std::vector<Parameter*> params = {&p};
  AdamState state;
  CHECK_THROWS_AS(AdamStep(state, params), Error);
  CHECK(p.value == Eigen::MatrixXd::Ones(2, 1));
  CHECK(state.step == 0);
}

TEST_CASE("identical gradient streams give identical trajectories") {
  auto run = []() {
    Network net(3, {LayerSpec::Dense(4, Activation::kTanh),
                    LayerSpec::Dense(1, Activation::kIdentity)},
                7);
    Adam adam(net.Parameters(), AdamConfig{});
    Rng rng(5);
    for (int step = 0; step < 20; ++step) {
      const auto x = RandomMatrix(rng, 3, 8);
      net.ZeroGrad();
      const auto out = net.Forward(x, 8);
      net.Backward(2.0 * out);
      adam.Step();
    }
    return ParameterHash(net);
  };
  CHECK(run() == run());
}

TEST_CASE("gradient clipping by global norm") {
  Parameter a{"a", Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Constant(1, 1, 3.0)};
  Parameter b{"b", Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Constant(1, 1, 4.0)};
  std::vector<Parameter*> params = {&a, &b};
  CHECK(ClipGradNorm(params, 10.0) == 5.0);
  CHECK(a.grad(0, 0) == 3.0);
  CHECK(ClipGradNorm(params, 1.0) == 5.0);
  CHECK(a.grad(0, 0) == doctest::Approx(0.6));
  CHECK(b.grad(0, 0) == doctest::Approx(0.8));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
  Network net(6, {LayerSpec::Gru(5), LayerSpec::Dense(3, Activation::kTanh)}, 1234);
  std::stringstream stream;
  SaveCheckpoint(MakeCheckpoint(net, 77), stream);
  const Checkpoint loaded = LoadCheckpoint(stream);
  CHECK(loaded.seed == 1234);
  CHECK(loaded.step == 77);
  Network other(6, {LayerSpec::Gru(5), LayerSpec::Dense(3, Activation::kTanh)}, 1);
  RestoreCheckpoint(loaded, other);
  CHECK(ParameterHash(other) == ParameterHash(net));

  Network wrong(6, {LayerSpec::Gru(4), LayerSpec::Dense(3, Activation::kTanh)}, 1);
  CHECK_THROWS_AS(RestoreCheckpoint(loaded, wrong), Error);
  std::stringstream garbage("not-a-checkpoint 1");
  CHECK_THROWS_AS(LoadCheckpoint(garbage), Error);
}

}  // namespace
}  // namespace nn
}  // namespace mprlab
