#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <string>

#include "support/model_gradcheck.hpp"
#include "tsfool/neural.hpp"

using namespace tsfool;
using namespace tsfool::nn;
using tsfool::testing::random_tensor;

namespace {

TrainedModel zeroed(TrainedModel m) {
  for (auto& [_, t] : m.params) t = Tensor(t.shape());
  return m;
}

}  // namespace

TEST(BuildModel, CnnLayersHaveRequestedFilters) {
  auto m = build_model(ModelSpec::make(Arch::CNN, {60, 60, 60}, 14, 7, 1));
  EXPECT_EQ(m.params.at("conv0.weight").shape(), (Shape{60, 3 * 7}));
  EXPECT_EQ(m.params.at("conv1.weight").shape(), (Shape{60, 3 * 60}));
  EXPECT_EQ(m.params.at("conv2.weight").shape(), (Shape{60, 3 * 60}));
  for (int l = 0; l < 3; ++l) {
    EXPECT_EQ(m.params.at("conv" + std::to_string(l) + ".bias").shape(), Shape{60});
  }
  EXPECT_EQ(m.params.at("dense0.weight").shape(), (Shape{kCnnDenseWidth, 14 * 60}));
  EXPECT_EQ(m.params.at("dense1.weight").shape(), (Shape{1, kCnnDenseWidth}));
  EXPECT_EQ(m.id(), "CNN(60,60,60) lh(14)");
}

TEST(BuildModel, LstmGateStacking) {
  auto m = build_model(ModelSpec::make(Arch::LSTM, {100, 100, 100}, 60, 5, 1));
  EXPECT_EQ(m.params.at("lstm0.weight").shape(), (Shape{400, 5 + 100}));
  EXPECT_EQ(m.params.at("lstm1.weight").shape(), (Shape{400, 100 + 100}));
  EXPECT_EQ(m.params.at("lstm2.weight").shape(), (Shape{400, 100 + 100}));
  const Tensor& b = m.params.at("lstm0.bias");
  for (std::size_t i = 0; i < 400; ++i) EXPECT_EQ(b[i], (i >= 100 && i < 200) ? 1.0 : 0.0);
}

TEST(BuildModel, GruLayout) {
  auto m = build_model(ModelSpec::make(Arch::GRU, {30, 20, 10}, 60, 5, 1));
  EXPECT_EQ(m.params.at("gru0.weight_x").shape(), (Shape{90, 5}));
  EXPECT_EQ(m.params.at("gru1.weight_h").shape(), (Shape{60, 20}));
  EXPECT_EQ(m.params.at("gru2.bias_x").shape(), Shape{30});
  EXPECT_EQ(m.params.at("dense0.weight").shape(), (Shape{1, 10}));
}

TEST(BuildModel, SameSeedSameParams) {
  for (Arch a : {Arch::CNN, Arch::LSTM, Arch::GRU}) {
    auto spec = ModelSpec::make(a, {6, 5, 4}, 8, 3, 42);
    EXPECT_EQ(build_model(spec).params, build_model(spec).params);
    auto other = spec;
    other.seed = 43;
    EXPECT_NE(build_model(spec).params, build_model(other).params);
  }
}

TEST(BuildModel, GlorotBoundsAndZeroBiases) {
  auto m = build_model(ModelSpec::make(Arch::GRU, {8, 8, 8}, 4, 3, 9));
  for (const auto& slot : param_layout(m.spec)) {
    const Tensor& t = m.params.at(slot.name);
    if (slot.is_bias) {
      EXPECT_EQ(t, Tensor(t.shape())) << slot.name;
    } else {
      const double limit = std::sqrt(6.0 / static_cast<double>(slot.shape[0] + slot.shape[1]));
      for (real v : t.data()) EXPECT_LE(std::abs(v), limit) << slot.name;
    }
  }
}

TEST(BuildModel, RejectsInvalidSpecs) {
  auto spec = ModelSpec::make(Arch::CNN, {4, 4, 4}, 5, 2);
  auto bad = spec;
  bad.hidden_widths = {4, 4};
  EXPECT_THROW(build_model(bad), SpecError);
  bad = spec;
  bad.hidden_widths = {4, 0, 4};
  EXPECT_THROW(build_model(bad), SpecError);
  bad = spec;
  bad.conv_kernel = 4;
  EXPECT_THROW(build_model(bad), SpecError);
  bad = spec;
  bad.dense_head = {50, 2};
  EXPECT_THROW(build_model(bad), SpecError);
  bad = spec;
  bad.lookback = 0;
  EXPECT_THROW(build_model(bad), SpecError);
}

TEST(Forward, ZeroWeightsGiveFinalBias) {
  for (Arch a : {Arch::CNN, Arch::LSTM, Arch::GRU}) {
    auto m = zeroed(build_model(ModelSpec::make(a, {4, 4, 4}, 5, 3, 1)));
    const std::string last = "dense" + std::to_string(m.spec.dense_head.size() - 1) + ".bias";
    m.params.at(last)[0] = 0.75;
    const Tensor out = predict(m, random_tensor({3, 5, 3}, 5));
    EXPECT_EQ(out.shape(), (Shape{3, 1}));
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(out[i], 0.75) << to_string(a);
  }
}

TEST(Forward, LstmZeroInputZeroBiasIsZero) {
  auto m = build_model(ModelSpec::make(Arch::LSTM, {5, 5, 5}, 6, 2, 3));
  for (auto& [name, t] : m.params) {
    if (name.find("bias") != std::string::npos) t = Tensor(t.shape());
  }
  const Tensor out = predict(m, Tensor(Shape{2, 6, 2}));
  EXPECT_EQ(out, Tensor(Shape{2, 1}));
}

TEST(Forward, RejectsWrongInputShape) {
  auto m = build_model(ModelSpec::make(Arch::GRU, {3, 3, 3}, 6, 2, 3));
  EXPECT_THROW(predict(m, Tensor(Shape{2, 5, 2})), ShapeError);
  EXPECT_THROW(predict(m, Tensor(Shape{2, 6, 3})), ShapeError);
}

TEST(Forward, NonFiniteActivationNamesLayer) {
  auto m = build_model(ModelSpec::make(Arch::LSTM, {3, 3, 3}, 4, 2, 3));
  m.params.at("lstm1.weight")[0] = std::numeric_limits<real>::quiet_NaN();
  try {
    predict(m, random_tensor({1, 4, 2}, 3));
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("lstm1"), std::string::npos) << e.what();
  }
}

TEST(Forward, RecordedPassGivesInputAndParamGradients) {
  auto m = build_model(ModelSpec::make(Arch::CNN, {3, 3, 3}, 4, 2, 3));
  ForwardPass pass = forward(m, random_tensor({2, 4, 2}, 1), true);
  Gradients g = pass.tape->backward(mean(pass.output));
  EXPECT_EQ(g[pass.input].shape(), (Shape{2, 4, 2}));
  for (const auto& [name, var] : pass.params) {
    EXPECT_EQ(g[var].shape(), m.params.at(name).shape()) << name;
  }
}

TEST(Forward, GradientsMatchFiniteDifferences) {
  for (Arch a : {Arch::CNN, Arch::LSTM, Arch::GRU}) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      auto m = tsfool::testing::random_model(ModelSpec::make(a, {5, 4, 3}, 5, 3, seed));
      const Tensor X = random_tensor({2, 5, 3}, seed + 100, 0.0, 1.0);
      const Tensor y = random_tensor({2, 1}, seed + 200, 0.0, 1.0);
      auto r = tsfool::testing::check_model_gradients(m, X, y);
      EXPECT_LT(r.input_error, 1e-4) << to_string(a) << " seed " << seed;
      EXPECT_LT(r.worst_param_error, 1e-4)
          << to_string(a) << " seed " << seed << " param " << r.worst_param;
    }
  }
}

TEST(MseLoss, Examples) {
  EXPECT_EQ(mse_loss(Tensor::matrix(2, 1, {1, 2}), Tensor::matrix(2, 1, {1, 2})), 0.0);
  EXPECT_DOUBLE_EQ(mse_loss(Tensor::matrix(2, 1, {0, 0}), Tensor::matrix(2, 1, {3, 4})), 12.5);
  EXPECT_THROW(mse_loss(Tensor::matrix(2, 1, {0, 0}), Tensor::matrix(1, 2, {3, 4})), ShapeError);

  Tape tape;
  Var pred = tape.leaf(Tensor::matrix(1, 1, {3}), true);
  Var loss = mse_loss(pred, tape.constant(Tensor::matrix(1, 1, {1})));
  EXPECT_DOUBLE_EQ(loss.value().item(), 4.0);
  EXPECT_DOUBLE_EQ(tape.backward(loss)[pred][0], 4.0);
}

TEST(MseLoss, NonNegative) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    EXPECT_GE(mse_loss(random_tensor({7, 1}, seed), random_tensor({7, 1}, seed + 50)), 0.0);
  }
}
