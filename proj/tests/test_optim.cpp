#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "pruneood/errors.hpp"
#include "pruneood/optim.hpp"

using namespace pruneood;
using ad::Tensor;

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::vector<Tensor> params{Tensor::from({2, 2}, {1, -2, 3, 0.5}, true), Tensor::column({7, 8}, true)};
  const auto before0 = params[0].values();
  const auto before1 = params[1].values();
  AdamState st = AdamState::for_params(params);
  const std::vector<double> z4(4, 0.0), z2(2, 0.0);
  const std::vector<std::span<const double>> grads{z4, z2};
  for (int i = 0; i < 25; ++i) adam_step(params, grads, st, 1e-2);
  EXPECT_EQ(params[0].values(), before0);
  EXPECT_EQ(params[1].values(), before1);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  // At t = 1: mhat = g, vhat = g^2, so the update is lr * g / (|g| + eps).
  std::vector<Tensor> params{Tensor::column({0.0, 0.0, 0.0}, true)};
  AdamState st = AdamState::for_params(params);
  const std::vector<double> g{0.3, -5.0, 1e-3};
  const std::vector<std::span<const double>> grads{g};
  const double lr = 1e-3;
  adam_step(params, grads, st, lr);
  for (std::size_t i = 0; i < 3; ++i) {
    const double expected = -lr * g[i] / (std::abs(g[i]) + 1e-8);
    EXPECT_NEAR(params[0].data()[i], expected, 1e-18);
    EXPECT_NEAR(std::abs(params[0].data()[i]), lr, 1e-8);
  }
}

TEST(Adam, MatchesHandUnrolledRecurrence) {
  std::vector<Tensor> params{Tensor::column({1.0}, true)};
  AdamState st = AdamState::for_params(params);
  const std::vector<double> gs{0.5, -0.25, 2.0, 0.1};
  double x = 1.0, m = 0.0, v = 0.0;
  for (std::size_t t = 1; t <= gs.size(); ++t) {
    const std::vector<double> g{gs[t - 1]};
    const std::vector<std::span<const double>> grads{g};
    adam_step(params, grads, st, 0.01);
    m = 0.9 * m + 0.1 * gs[t - 1];
    v = 0.999 * v + 0.001 * gs[t - 1] * gs[t - 1];
    const double mh = m / (1 - std::pow(0.9, t));
    const double vh = v / (1 - std::pow(0.999, t));
    x -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(params[0].data()[0], x, 1e-15) << "step " << t;
  }
}

TEST(Adam, IdenticalRunsGiveIdenticalTrajectories) {
  auto run = [] {
    std::vector<Tensor> params{Tensor::column({0.2, -0.4}, true)};
    AdamState st = AdamState::for_params(params);
    std::vector<std::vector<double>> traj;
    for (int i = 0; i < 50; ++i) {
      const auto x = params[0].values();
      const std::vector<double> g{2 * x[0] - 1, std::sin(x[1])};
      const std::vector<std::span<const double>> grads{g};
      adam_step(params, grads, st, 0.05);
      traj.push_back(params[0].values());
    }
    return traj;
  };
  EXPECT_EQ(run(), run());
}

TEST(Adam, InactiveSlotsKeepTheirOwnStepCount) {
  std::vector<Tensor> params{Tensor::column({0.0}, true), Tensor::column({0.0}, true)};
  AdamState st = AdamState::for_params(params);
  const std::vector<double> g{1.0};
  const std::vector<std::span<const double>> grads{g, g};
  for (int i = 0; i < 3; ++i) adam_step(params, grads, st, 0.1, {true, false});
  EXPECT_EQ(params[1].data()[0], 0.0);
  EXPECT_EQ(st.slots[0].step, 3u);
  EXPECT_EQ(st.slots[1].step, 0u);
  // The first real step of the frozen slot is a bias-corrected step 1.
  adam_step(params, grads, st, 0.1, {false, true});
  EXPECT_NEAR(params[1].data()[0], -0.1, 1e-8);
}

TEST(Adam, ShapeMismatchesAreContractErrors) {
  std::vector<Tensor> params{Tensor::column({0.0, 1.0}, true)};
  AdamState st = AdamState::for_params(params);
  const std::vector<double> g3(3, 1.0);
  const std::vector<std::span<const double>> bad{g3};
  EXPECT_THROW(adam_step(params, bad, st, 0.1), ContractError);
  const std::vector<std::span<const double>> none;
  EXPECT_THROW(adam_step(params, none, st, 0.1), ContractError);
  const std::vector<double> g2(2, 1.0);
  const std::vector<std::span<const double>> ok{g2};
  EXPECT_THROW(adam_step(params, ok, st, 0.1, {true, false}), ContractError);
}

TEST(Adam, UsesAccumulatedGradBuffers) {
  std::vector<Tensor> params{Tensor::column({3.0}, true)};
  AdamState st = AdamState::for_params(params);
  ad::Tape t;
  t.backward(ad::mul(t, params[0], params[0]));  // d/dx x^2 = 6
  adam_step(params, st, 0.5);
  EXPECT_NEAR(params[0].data()[0], 2.5, 1e-8);
}
