#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <vector>

#include "tsfool/train.hpp"

using namespace tsfool;
using namespace tsfool::nn;

namespace {

// Scalar Adam written out longhand, independent of adam_step.
std::vector<double> scalar_adam_trajectory(double w, double lr, int steps) {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0, v = 0;
  std::vector<double> out;
  for (int t = 1; t <= steps; ++t) {
    const double g = 2 * w;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    w -= lr * mhat / (std::sqrt(vhat) + eps);
    out.push_back(w);
  }
  return out;
}

}  // namespace

// Adam at lr 0.1 overshoots zero on w^2 after 11 steps and then oscillates
// with shrinking amplitude, so |w| is monotone only up to the first crossing.
// Pinned values come from torch.optim.Adam (float64, default betas).
TEST(Adam, MinimizesSquare) {
  TrainConfig cfg;
  cfg.learning_rate = 0.1;
  ParamStore params{{"w", Tensor::vector({1.0})}};
  AdamState state;
  const auto oracle = scalar_adam_trajectory(1.0, 0.1, 50);
  std::vector<double> path;
  double prev = 1.0;
  for (int step = 0; step < 50; ++step) {
    ParamStore grads{{"w", Tensor::vector({2 * params.at("w")[0]})}};
    adam_step(params, grads, state, cfg);
    const double w = params.at("w")[0];
    if (step <= 10) EXPECT_LT(std::abs(w), std::abs(prev)) << "step " << step;
    EXPECT_NEAR(w, oracle[static_cast<std::size_t>(step)], 1e-12);
    path.push_back(w);
    prev = w;
  }
  EXPECT_EQ(state.t, 50u);
  EXPECT_NEAR(path[10], 0.005131501948057088, 1e-12);
  EXPECT_NEAR(path[11], -0.05893789063004737, 1e-12);
  EXPECT_NEAR(path[49], -0.004818223222661105, 1e-12);
  EXPECT_LT(std::abs(path[49]), 0.01);
}

TEST(Adam, ZeroGradientLeavesParamsButCountsStep) {
  TrainConfig cfg;
  ParamStore params{{"a", Tensor::vector({0.5, -2.0})}, {"b", Tensor::scalar(3.0)}};
  const ParamStore before = params;
  ParamStore grads{{"a", Tensor(Shape{2})}, {"b", Tensor(Shape{})}};
  AdamState state;
  adam_step(params, grads, state, cfg);
  EXPECT_EQ(params, before);
  EXPECT_EQ(state.t, 1u);
}

TEST(Adam, FirstStepIsLearningRateTimesSign) {
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  ParamStore params{{"w", Tensor::vector({1.0, 1.0, 1.0})}};
  ParamStore grads{{"w", Tensor::vector({3.0, -0.02, 1e-3})}};
  AdamState state;
  adam_step(params, grads, state, cfg);
  for (std::size_t i = 0; i < 3; ++i) {
    const double g = grads.at("w")[i];
    const double step = 1.0 - params.at("w")[i];
    EXPECT_NEAR(step, cfg.learning_rate * (g > 0 ? 1 : -1), cfg.learning_rate * 1e-4);
  }
}

TEST(Adam, NanGradientAborts) {
  TrainConfig cfg;
  ParamStore params{{"w", Tensor::vector({1.0})}};
  ParamStore grads{{"w", Tensor::vector({std::numeric_limits<real>::quiet_NaN()})}};
  AdamState state;
  EXPECT_THROW(adam_step(params, grads, state, cfg), NumericalError);
  EXPECT_EQ(params.at("w")[0], 1.0);
}

TEST(Adam, GradientsMustAlignWithParams) {
  TrainConfig cfg;
  ParamStore params{{"w", Tensor::vector({1.0, 2.0})}};
  AdamState state;
  ParamStore wrong_shape{{"w", Tensor::vector({1.0})}};
  EXPECT_THROW(adam_step(params, wrong_shape, state, cfg), SpecError);
  ParamStore wrong_name{{"v", Tensor::vector({1.0, 2.0})}};
  EXPECT_THROW(adam_step(params, wrong_name, state, cfg), SpecError);
}

TEST(ClipGlobalNorm, ScalesOnlyAboveThreshold) {
  ParamStore g{{"a", Tensor::vector({3.0})}, {"b", Tensor::vector({4.0})}};
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 10.0), 5.0);
  EXPECT_DOUBLE_EQ(g.at("a")[0], 3.0);
  EXPECT_DOUBLE_EQ(clip_global_norm(g, 2.5), 5.0);
  EXPECT_DOUBLE_EQ(g.at("a")[0], 1.5);
  EXPECT_DOUBLE_EQ(g.at("b")[0], 2.0);
}
