#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsfool/data.hpp"
#include "tsfool/neural.hpp"
#include "tsfool/random.hpp"
#include "tsfool/report.hpp"

namespace tsfool::nn {

struct TrainConfig {
  std::size_t epochs = 250;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t shuffle_seed = 0;
  double clip_norm = 5.0;  // global gradient-norm cap; <= 0 disables

  void validate() const {
    if (epochs < 1) throw SpecError("epochs must be >= 1");
    if (batch_size < 1) throw SpecError("batch_size must be >= 1");
    if (!(learning_rate > 0)) throw SpecError("learning_rate must be > 0");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1)) {
      throw SpecError("Adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0)) throw SpecError("adam_eps must be > 0");
  }
};

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::size_t t = 0;
  ParamStore m;
  ParamStore v;
};

inline void adam_step(ParamStore& params, const ParamStore& grads, AdamState& state,
                      const TrainConfig& cfg) {
  if (grads.size() != params.size()) {
    throw SpecError("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                    std::to_string(params.size()) + " parameters");
  }
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end() || it->second.shape() != g.shape()) {
      throw SpecError("adam_step: gradient '" + name + "' does not match a parameter");
    }
    for (real x : g.data()) {
      if (std::isnan(x) || std::isinf(x)) {
        throw NumericalError("adam_step: non-finite gradient for '" + name + "'");
      }
    }
  }
  ++state.t;
  const double b1 = cfg.adam_beta1, b2 = cfg.adam_beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    auto& m = state.m.try_emplace(name, Tensor(p.shape())).first->second;
    auto& v = state.v.try_emplace(name, Tensor(p.shape())).first->second;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      m[i] = static_cast<real>(b1 * m[i] + (1.0 - b1) * gi);
      v[i] = static_cast<real>(b2 * v[i] + (1.0 - b2) * gi * gi);
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] = static_cast<real>(p[i] - cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    }
  }
}

/// Scales the gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before scaling.
inline double clip_global_norm(ParamStore& grads, double max_norm) {
  double sq = 0;
  for (const auto& [_, g] : grads) {
    for (real x : g.data()) sq += static_cast<double>(x) * x;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& [_, g] : grads) {
      for (auto& x : g.data()) x = static_cast<real>(x * s);
    }
  }
  return norm;
}

// ---------------------------------------------------------------------------
// Training

inline void check_dims(const ModelSpec& spec, const data::WindowedDataset& ds) {
  if (ds.size() == 0) throw data::DataError("dataset has no windows");
  if (ds.lookback != spec.lookback || ds.input_dim() != spec.input_dim) {
    throw ShapeError("dataset windows are [" + std::to_string(ds.lookback) + " x " +
                     std::to_string(ds.input_dim()) + "] but " + spec.label() +
                     " expects [" + std::to_string(spec.lookback) + " x " +
                     std::to_string(spec.input_dim) + "]");
  }
}

/// Loss and parameter gradients of `model` on one batch.
inline double loss_and_param_grads(const TrainedModel& model, const Tensor& X,
                                   const Tensor& y, ParamStore& grads) {
  ForwardPass pass = forward(model, X, Track::kParams);
  Var target = pass.tape->constant(y);
  Var loss = mse_loss(pass.output, target);
  Gradients g = pass.tape->backward(loss);
  grads.clear();
  for (const auto& [name, var] : pass.params) grads.emplace(name, g[var]);
  return loss.value().item();
}

inline std::vector<std::size_t> shuffled_order(std::size_t n, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    std::swap(idx[i - 1], idx[rng.below(i)]);
  }
  return idx;
}

/// Mini-batch Adam on MSE. Each history entry is the size-weighted mean of
/// the batch losses seen during that epoch.
inline TrainedModel train(TrainedModel model, const data::WindowedDataset& ds,
                          const TrainConfig& cfg) {
  cfg.validate();
  check_dims(model.spec, ds);
  check_params(model.spec, model.params);

  Rng rng(cfg.shuffle_seed);
  AdamState state;
  ParamStore grads;
  const std::size_t n = ds.size();
  model.history.clear();
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto order = shuffled_order(n, rng);
    double total = 0;
    for (std::size_t b = 0; b < n; b += cfg.batch_size) {
      const std::size_t e = std::min(n, b + cfg.batch_size);
      const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                         order.begin() + static_cast<std::ptrdiff_t>(e));
      const data::WindowedDataset batch = ds.subset(idx);
      double loss;
      try {
        loss = loss_and_param_grads(model, batch.X, batch.y, grads);
      } catch (const NumericalError& err) {
        throw NumericalError("training diverged in epoch " + std::to_string(epoch) +
                             ": " + err.what());
      }
      if (!std::isfinite(loss)) {
        throw NumericalError("training diverged in epoch " + std::to_string(epoch) +
                             ": non-finite loss");
      }
      clip_global_norm(grads, cfg.clip_norm);
      try {
        adam_step(model.params, grads, state, cfg);
      } catch (const NumericalError& err) {
        throw NumericalError("training aborted in epoch " + std::to_string(epoch) +
                             ": " + err.what());
      }
      total += loss * static_cast<double>(e - b);
    }
    model.history.push_back({epoch, total / static_cast<double>(n)});
  }
  model.scaler = ds.scaler;
  model.meta = {ds.fingerprint(), cfg.epochs, cfg.batch_size, cfg.learning_rate};
  return model;
}

// ---------------------------------------------------------------------------
// Evaluation

inline EvalReport evaluate_inputs(const TrainedModel& model, const Tensor& X,
                                  const Tensor& y, std::uint64_t fingerprint) {
  if (X.rank() != 3 || X.dim(0) == 0) throw data::DataError("evaluate: empty dataset");
  const Tensor pred = predict(model, X);
  EvalReport r;
  r.model_id = model.id();
  r.dataset_fingerprint = fingerprint;
  r.predictions.reserve(X.dim(0));
  for (std::size_t m = 0; m < X.dim(0); ++m) {
    r.predictions.push_back({m, static_cast<double>(y[m]), static_cast<double>(pred[m])});
  }
  r.rmse = std::sqrt(mse_loss(pred, y));
  return r;
}

inline EvalReport evaluate(const TrainedModel& model, const data::WindowedDataset& ds) {
  check_dims(model.spec, ds);
  return evaluate_inputs(model, ds.X, ds.y, ds.fingerprint());
}

// ---------------------------------------------------------------------------
// Grid search

struct GridResult {
  TrainedModel model;
  TrainConfig config;
  double validation_rmse;
  std::vector<double> candidate_rmse;
};

/// Trains one model per candidate config and keeps the lowest validation RMSE
/// (first wins on ties).
inline GridResult grid_search(const ModelSpec& spec,
                              const std::vector<TrainConfig>& candidates,
                              const data::WindowedDataset& train_set,
                              const data::WindowedDataset& validation) {
  if (candidates.empty()) throw SpecError("grid_search: no candidate configs");
  std::optional<GridResult> best;
  std::vector<double> scores;
  for (const auto& cfg : candidates) {
    TrainedModel m = train(build_model(spec), train_set, cfg);
    const double rmse = evaluate(m, validation).rmse;
    scores.push_back(rmse);
    if (!best || rmse < best->validation_rmse) best = GridResult{std::move(m), cfg, rmse, {}};
  }
  best->candidate_rmse = std::move(scores);
  return std::move(*best);
}

}  // namespace tsfool::nn
