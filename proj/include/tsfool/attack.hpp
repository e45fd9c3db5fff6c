#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <string>
#include <vector>

#include "tsfool/attack_config.hpp"
#include "tsfool/data.hpp"
#include "tsfool/neural.hpp"
#include "tsfool/tensor.hpp"

namespace tsfool::attack {

/// Crafted inputs alongside the originals they were derived from.
struct AdversarialBatch {
  Tensor x_adv;   // [M, T, N]
  Tensor x_orig;  // [M, T, N]
  Tensor y;       // [M, 1]
  AttackConfig config;
  std::vector<double> max_abs_delta;  // per window
  std::vector<double> loss_before;    // per-window squared error
  std::vector<double> loss_after;

  std::size_t size() const { return x_orig.dim(0); }
};

/// Windows per gradient pass. Windows never interact, so chunking changes
/// only the 1/M factor of the mean loss and never the gradient sign.
inline constexpr std::size_t kGradientChunk = 128;

/// Gradient of the batch MSE with respect to the inputs.
inline Tensor input_gradient(const nn::TrainedModel& model, const Tensor& X,
                             const Tensor& y) {
  if (X.rank() != 3 || y.rank() != 2 || y.dim(0) != X.dim(0) || y.dim(1) != 1) {
    throw ShapeError("input_gradient: inputs " + tsfool::to_string(X.shape()) +
                     " and targets " + tsfool::to_string(y.shape()) + " disagree");
  }
  const std::size_t batch = X.dim(0);
  Tensor grad(X.shape());
  const std::size_t stride = X.size() / std::max<std::size_t>(batch, 1);
  for (std::size_t b = 0; b < batch; b += kGradientChunk) {
    const std::size_t e = std::min(batch, b + kGradientChunk);
    nn::ForwardPass pass =
        nn::forward(model, nn::detail::rows_of(X, b, e), nn::Track::kInput);
    Var target = pass.tape->constant(nn::detail::rows_of(y, b, e));
    Var loss = nn::mse_loss(pass.output, target);
    const Tensor g = pass.tape->backward(loss)[pass.input];
    std::copy(g.data().begin(), g.data().end(),
              grad.data().begin() + static_cast<std::ptrdiff_t>(b * stride));
  }
  return grad;
}

namespace detail {

inline real sign(real v) { return v > 0 ? real{1} : (v < 0 ? real{-1} : real{0}); }

inline void check_inputs(const nn::TrainedModel& model, const Tensor& X,
                         const Tensor& y, const AttackConfig& cfg) {
  const auto& s = model.spec;
  if (X.rank() != 3 || X.dim(1) != s.lookback || X.dim(2) != s.input_dim) {
    throw ShapeError("attack: inputs " + tsfool::to_string(X.shape()) +
                     " do not fit " + s.label() + " with " +
                     std::to_string(s.input_dim) + " channels");
  }
  if (y.rank() != 2 || y.dim(0) != X.dim(0) || y.dim(1) != 1) {
    throw ShapeError("attack: targets " + tsfool::to_string(y.shape()) +
                     " do not match " + std::to_string(X.dim(0)) + " windows");
  }
  if (!cfg.feature_mask.empty() && cfg.feature_mask.size() != s.input_dim) {
    throw ShapeError("attack: feature mask has " +
                     std::to_string(cfg.feature_mask.size()) + " entries for " +
                     std::to_string(s.input_dim) + " channels");
  }
}

inline void check_gradient(const Tensor& g, const std::string& where) {
  for (real v : g.data()) {
    if (!std::isfinite(v)) throw nn::NumericalError("non-finite input gradient " + where);
  }
}

// Restores masked channels, applies the domain clamp, then projects onto the
// epsilon ball around the original so the ball always wins.
inline void constrain(Tensor& x, const Tensor& orig, const AttackConfig& cfg) {
  const std::size_t n = orig.dim(2);
  const bool masked = !cfg.feature_mask.empty();
  const real eps = static_cast<real>(cfg.epsilon);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (masked && !cfg.feature_mask[i % n]) {
      x[i] = orig[i];
      continue;
    }
    real v = x[i];
    if (cfg.domain_clamp) {
      v = std::clamp(v, static_cast<real>(cfg.domain_clamp->first),
                     static_cast<real>(cfg.domain_clamp->second));
    }
    x[i] = std::min(orig[i] + eps, std::max(orig[i] - eps, v));
  }
}

inline std::vector<double> squared_errors(const nn::TrainedModel& model,
                                          const Tensor& X, const Tensor& y) {
  const Tensor pred = nn::predict(model, X);
  std::vector<double> out(y.size());
  for (std::size_t m = 0; m < y.size(); ++m) {
    const double d = static_cast<double>(pred[m]) - static_cast<double>(y[m]);
    out[m] = d * d;
  }
  return out;
}

inline AdversarialBatch finish(const nn::TrainedModel& model, Tensor x_adv,
                               const Tensor& X, const Tensor& y,
                               const AttackConfig& cfg) {
  AdversarialBatch out;
  out.x_adv = std::move(x_adv);
  out.x_orig = X;
  out.y = y;
  out.config = cfg;
  const std::size_t batch = X.dim(0);
  const std::size_t stride = X.size() / std::max<std::size_t>(batch, 1);
  out.max_abs_delta.assign(batch, 0.0);
  for (std::size_t m = 0; m < batch; ++m) {
    for (std::size_t k = m * stride; k < (m + 1) * stride; ++k) {
      out.max_abs_delta[m] = std::max(
          out.max_abs_delta[m],
          std::abs(static_cast<double>(out.x_adv[k]) - static_cast<double>(X[k])));
    }
  }
  out.loss_before = squared_errors(model, X, y);
  out.loss_after = squared_errors(model, out.x_adv, y);
  return out;
}

}  // namespace detail

/// One signed-gradient step of size epsilon.
inline AdversarialBatch fgsm(const nn::TrainedModel& model, const Tensor& X,
                             const Tensor& y, AttackConfig cfg) {
  cfg.kind = Kind::FGSM;
  cfg.validate();
  detail::check_inputs(model, X, y, cfg);
  const Tensor g = input_gradient(model, X, y);
  detail::check_gradient(g, "(FGSM)");
  const real eps = static_cast<real>(cfg.epsilon);
  Tensor x_adv(X.shape());
  for (std::size_t i = 0; i < X.size(); ++i) x_adv[i] = X[i] + eps * detail::sign(g[i]);
  detail::constrain(x_adv, X, cfg);
  return detail::finish(model, std::move(x_adv), X, y, cfg);
}

/// `iters` signed-gradient steps of size alpha, each followed by projection
/// onto the epsilon ball around the original input.
inline AdversarialBatch bim(const nn::TrainedModel& model, const Tensor& X,
                            const Tensor& y, AttackConfig cfg) {
  cfg.kind = Kind::BIM;
  cfg.validate();
  detail::check_inputs(model, X, y, cfg);
  const real alpha = static_cast<real>(cfg.alpha);
  Tensor x_adv = X;
  for (std::size_t step = 1; step <= cfg.iters; ++step) {
    const Tensor g = input_gradient(model, x_adv, y);
    detail::check_gradient(g, "at BIM step " + std::to_string(step));
    for (std::size_t i = 0; i < x_adv.size(); ++i) x_adv[i] += alpha * detail::sign(g[i]);
    detail::constrain(x_adv, X, cfg);
  }
  return detail::finish(model, std::move(x_adv), X, y, cfg);
}

inline AdversarialBatch craft(const nn::TrainedModel& model, const Tensor& X,
                              const Tensor& y, const AttackConfig& cfg) {
  return cfg.kind == Kind::FGSM ? fgsm(model, X, y, cfg) : bim(model, X, y, cfg);
}

struct AttackStats {
  double linf = 0;
  double l2 = 0;
  double loss_before = 0;  // batch MSE on the originals
  double loss_after = 0;   // batch MSE on the crafted inputs
  double loss_delta = 0;
};

inline AttackStats attack_stats(const nn::TrainedModel& model,
                                const AdversarialBatch& batch) {
  AttackStats s;
  double sq = 0;
  for (std::size_t i = 0; i < batch.x_adv.size(); ++i) {
    const double d =
        static_cast<double>(batch.x_adv[i]) - static_cast<double>(batch.x_orig[i]);
    s.linf = std::max(s.linf, std::abs(d));
    sq += d * d;
  }
  s.l2 = std::sqrt(sq);
  s.loss_before = nn::mse_loss(nn::predict(model, batch.x_orig), batch.y);
  s.loss_after = nn::mse_loss(nn::predict(model, batch.x_adv), batch.y);
  s.loss_delta = s.loss_after - s.loss_before;
  return s;
}

/// CSV rows (window_index, t, channel, original, adversarial, delta) for the
/// selected windows, or all windows when `windows` is empty.
inline void write_signature_csv(const AdversarialBatch& batch,
                                const std::vector<std::string>& channel_names,
                                const std::string& path,
                                const std::vector<std::size_t>& windows = {}) {
  const std::size_t steps = batch.x_orig.dim(1);
  const std::size_t n = batch.x_orig.dim(2);
  if (channel_names.size() != n) {
    throw ShapeError("signature: " + std::to_string(channel_names.size()) +
                     " channel names for " + std::to_string(n) + " channels");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw data::DataError("cannot write '" + path + "'");
  out << "window_index,t,channel,original,adversarial,delta\n";
  auto emit = [&](std::size_t m) {
    if (m >= batch.size()) throw data::DataError("signature: window index out of range");
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t c = 0; c < n; ++c) {
        const std::size_t k = (m * steps + t) * n + c;
        const double o = batch.x_orig[k];
        const double a = batch.x_adv[k];
        out << m << ',' << t << ',' << channel_names[c] << ',' << data::format_value(o)
            << ',' << data::format_value(a) << ',' << data::format_value(a - o) << '\n';
      }
    }
  };
  if (windows.empty()) {
    for (std::size_t m = 0; m < batch.size(); ++m) emit(m);
  } else {
    for (std::size_t m : windows) emit(m);
  }
  if (!out) throw data::DataError("write to '" + path + "' failed");
}

}  // namespace tsfool::attack
