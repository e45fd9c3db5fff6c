#pragma once

#include <string>

#include "support/finite_difference.hpp"
#include "tsfool/neural.hpp"

namespace tsfool::testing {

struct GradCheck {
  double input_error = 0;
  double worst_param_error = 0;
  std::string worst_param;
};

/// Built model with random biases as well, so no ReLU pre-activation lands
/// exactly on the kink at zero (zero biases make dead receptive fields do that).
inline nn::TrainedModel random_model(const nn::ModelSpec& spec) {
  nn::TrainedModel m = nn::build_model(spec);
  Rng rng(spec.seed ^ 0x5eedULL);
  for (const auto& slot : nn::param_layout(spec)) {
    if (!slot.is_bias) continue;
    for (auto& v : m.params.at(slot.name).data()) v = static_cast<real>(rng.uniform(-0.5, 0.5));
  }
  return m;
}

inline double model_loss(const nn::TrainedModel& model, const Tensor& X, const Tensor& y) {
  return nn::mse_loss(nn::predict(model, X), y);
}

/// Reverse-mode gradients of the MSE versus central differences, for the
/// input and every parameter tensor.
inline GradCheck check_model_gradients(const nn::TrainedModel& model, const Tensor& X,
                                       const Tensor& y) {
  nn::ForwardPass pass = nn::forward(model, X, true);
  Var loss = nn::mse_loss(pass.output, pass.tape->constant(y));
  Gradients g = pass.tape->backward(loss);

  GradCheck out;
  out.input_error = max_relative_error(
      g[pass.input],
      central_difference([&](const Tensor& probe) { return model_loss(model, probe, y); }, X));
  for (const auto& [name, var] : pass.params) {
    nn::TrainedModel probe_model = model;
    auto f = [&](const Tensor& probe) {
      probe_model.params.at(name) = probe;
      return model_loss(probe_model, X, y);
    };
    const double err = max_relative_error(g[var], central_difference(f, model.params.at(name)));
    if (err >= out.worst_param_error) {
      out.worst_param_error = err;
      out.worst_param = name;
    }
  }
  return out;
}

}  // namespace tsfool::testing
