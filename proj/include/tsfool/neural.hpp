#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tsfool/data.hpp"
#include "tsfool/ops.hpp"
#include "tsfool/random.hpp"
#include "tsfool/tape.hpp"
#include "tsfool/tensor.hpp"

namespace tsfool::nn {

/// Non-finite values during a forward pass, training or attack.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SpecError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Arch : std::uint8_t { CNN = 0, LSTM = 1, GRU = 2 };

inline std::string to_string(Arch a) {
  switch (a) {
    case Arch::CNN: return "CNN";
    case Arch::LSTM: return "LSTM";
    case Arch::GRU: return "GRU";
  }
  return "?";
}

inline Arch parse_arch(const std::string& s) {
  if (s == "CNN" || s == "cnn") return Arch::CNN;
  if (s == "LSTM" || s == "lstm") return Arch::LSTM;
  if (s == "GRU" || s == "gru") return Arch::GRU;
  throw SpecError("unknown architecture '" + s + "' (expected CNN, LSTM or GRU)");
}

/// Width of the hidden dense layer between the CNN feature maps and the output.
inline constexpr std::size_t kCnnDenseWidth = 50;

struct ModelSpec {
  Arch arch = Arch::LSTM;
  std::vector<std::size_t> hidden_widths{8, 8, 8};
  std::size_t lookback = 14;
  std::size_t input_dim = 1;
  std::vector<std::size_t> dense_head{1};
  std::size_t conv_kernel = 3;
  std::uint64_t seed = 0;

  /// Spec with the default head for the architecture.
  static ModelSpec make(Arch arch, std::vector<std::size_t> widths,
                        std::size_t lookback, std::size_t input_dim,
                        std::uint64_t seed = 0) {
    ModelSpec s;
    s.arch = arch;
    s.hidden_widths = std::move(widths);
    s.lookback = lookback;
    s.input_dim = input_dim;
    s.seed = seed;
    s.dense_head = arch == Arch::CNN ? std::vector<std::size_t>{kCnnDenseWidth, 1}
                                     : std::vector<std::size_t>{1};
    return s;
  }

  void validate() const {
    if (hidden_widths.size() != 3) {
      throw SpecError("model needs exactly 3 hidden widths, got " +
                      std::to_string(hidden_widths.size()));
    }
    for (std::size_t w : hidden_widths) {
      if (w == 0) throw SpecError("hidden widths must be positive");
    }
    if (lookback == 0) throw SpecError("lookback must be positive");
    if (input_dim == 0) throw SpecError("input_dim must be positive");
    if (dense_head.empty() || dense_head.back() != 1) {
      throw SpecError("dense head must end in a single output");
    }
    for (std::size_t w : dense_head) {
      if (w == 0) throw SpecError("dense head widths must be positive");
    }
    if (arch == Arch::CNN && (conv_kernel == 0 || conv_kernel % 2 == 0)) {
      throw SpecError("conv_kernel must be a positive odd number, got " +
                      std::to_string(conv_kernel));
    }
  }

  /// e.g. "LSTM(100,100,100) lh(14)"
  std::string label() const {
    std::string s = to_string(arch) + "(";
    for (std::size_t i = 0; i < hidden_widths.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(hidden_widths[i]);
    }
    return s + ") lh(" + std::to_string(lookback) + ")";
  }

  bool operator==(const ModelSpec&) const = default;
};

using ParamStore = std::map<std::string, Tensor>;

struct TrainMeta {
  std::uint64_t dataset_fingerprint = 0;
  std::size_t epochs = 0;
  std::size_t batch_size = 0;
  double learning_rate = 0;
  bool operator==(const TrainMeta&) const = default;
};

struct HistoryEntry {
  std::size_t epoch;
  double train_loss;
  bool operator==(const HistoryEntry&) const = default;
};

struct TrainedModel {
  ModelSpec spec;
  ParamStore params;
  data::Scaler scaler;
  std::vector<HistoryEntry> history;
  TrainMeta meta;

  std::string id() const { return spec.label(); }
};

// ---------------------------------------------------------------------------
// Parameter layout

struct ParamSlot {
  std::string name;
  Shape shape;
  bool is_bias;
};

namespace detail {

inline void dense_slots(const ModelSpec& spec, std::size_t in,
                        std::vector<ParamSlot>& out) {
  for (std::size_t j = 0; j < spec.dense_head.size(); ++j) {
    const std::size_t w = spec.dense_head[j];
    const std::string p = "dense" + std::to_string(j);
    out.push_back({p + ".weight", {w, in}, false});
    out.push_back({p + ".bias", {w}, true});
    in = w;
  }
}

}  // namespace detail

/// Parameter names and shapes in initialization order. Weight matrices are
/// stored [out, in] and applied as x W^T + b.
inline std::vector<ParamSlot> param_layout(const ModelSpec& spec) {
  spec.validate();
  std::vector<ParamSlot> slots;
  std::size_t in = spec.input_dim;
  for (std::size_t l = 0; l < 3; ++l) {
    const std::size_t h = spec.hidden_widths[l];
    const std::string idx = std::to_string(l);
    switch (spec.arch) {
      case Arch::CNN:
        slots.push_back({"conv" + idx + ".weight", {h, spec.conv_kernel * in}, false});
        slots.push_back({"conv" + idx + ".bias", {h}, true});
        break;
      case Arch::LSTM:
        // Gate rows stacked as input, forget, candidate, output.
        slots.push_back({"lstm" + idx + ".weight", {4 * h, in + h}, false});
        slots.push_back({"lstm" + idx + ".bias", {4 * h}, true});
        break;
      case Arch::GRU:
        // Gate rows stacked as reset, update, candidate.
        slots.push_back({"gru" + idx + ".weight_x", {3 * h, in}, false});
        slots.push_back({"gru" + idx + ".weight_h", {3 * h, h}, false});
        slots.push_back({"gru" + idx + ".bias_x", {3 * h}, true});
        slots.push_back({"gru" + idx + ".bias_h", {3 * h}, true});
        break;
    }
    in = h;
  }
  if (spec.arch == Arch::CNN) in = spec.lookback * spec.hidden_widths.back();
  detail::dense_slots(spec, in, slots);
  return slots;
}

/// Checks that `params` holds exactly the layout implied by `spec`.
inline void check_params(const ModelSpec& spec, const ParamStore& params) {
  const auto layout = param_layout(spec);
  if (layout.size() != params.size()) {
    throw SpecError("model has " + std::to_string(params.size()) +
                    " parameter tensors, layout needs " +
                    std::to_string(layout.size()));
  }
  for (const auto& slot : layout) {
    auto it = params.find(slot.name);
    if (it == params.end()) throw SpecError("missing parameter '" + slot.name + "'");
    if (it->second.shape() != slot.shape) {
      throw SpecError("parameter '" + slot.name + "' has shape " +
                      tsfool::to_string(it->second.shape()) + ", expected " +
                      tsfool::to_string(slot.shape));
    }
  }
}

/// Glorot-uniform weights (fan computed from the stored [out, in] matrix),
/// zero biases, LSTM forget-gate bias 1.
inline TrainedModel build_model(const ModelSpec& spec) {
  spec.validate();
  TrainedModel model;
  model.spec = spec;
  Rng rng(spec.seed);
  for (const auto& slot : param_layout(spec)) {
    Tensor t(slot.shape);
    if (!slot.is_bias) {
      const double limit =
          std::sqrt(6.0 / static_cast<double>(slot.shape[0] + slot.shape[1]));
      for (auto& v : t.data()) v = static_cast<real>(rng.uniform(-limit, limit));
    } else if (spec.arch == Arch::LSTM && slot.name.rfind("lstm", 0) == 0) {
      const std::size_t h = slot.shape[0] / 4;
      for (std::size_t i = h; i < 2 * h; ++i) t[i] = 1;
    }
    model.params.emplace(slot.name, std::move(t));
  }
  return model;
}

// ---------------------------------------------------------------------------
// Forward pass

enum class Track : unsigned { kNone = 0, kInput = 1, kParams = 2, kAll = 3 };

inline bool tracks(Track t, Track bit) {
  return (static_cast<unsigned>(t) & static_cast<unsigned>(bit)) != 0;
}

/// A recorded forward pass. Owns its tape.
struct ForwardPass {
  std::unique_ptr<Tape> tape = std::make_unique<Tape>();
  Var input;
  std::map<std::string, Var> params;
  Var output;  // [batch, 1]
};

namespace detail {

inline void check_finite(Var v, const std::string& layer) {
  for (real x : v.value().data()) {
    if (!std::isfinite(x)) {
      throw NumericalError("non-finite activation in layer " + layer);
    }
  }
}

inline Var step_input(Var x, std::size_t t, std::size_t batch, std::size_t n) {
  return reshape(slice(x, 1, t, t + 1), Shape{batch, n});
}

inline std::vector<Var> lstm_layer(Tape& tape, const std::vector<Var>& seq,
                                   Var w, Var b, std::size_t h, std::size_t batch) {
  Var hs = tape.constant(Tensor(Shape{batch, h}));
  Var cs = tape.constant(Tensor(Shape{batch, h}));
  std::vector<Var> out;
  out.reserve(seq.size());
  for (Var xt : seq) {
    Var z = linear(concat({xt, hs}, 1), w, b);
    Var i = sigmoid(slice(z, 1, 0, h));
    Var f = sigmoid(slice(z, 1, h, 2 * h));
    Var g = tsfool::tanh(slice(z, 1, 2 * h, 3 * h));
    Var o = sigmoid(slice(z, 1, 3 * h, 4 * h));
    cs = add(mul(f, cs), mul(i, g));
    hs = mul(o, tsfool::tanh(cs));
    out.push_back(hs);
  }
  return out;
}

inline std::vector<Var> gru_layer(Tape& tape, const std::vector<Var>& seq, Var wx,
                                  Var wh, Var bx, Var bh, std::size_t h,
                                  std::size_t batch) {
  Var hs = tape.constant(Tensor(Shape{batch, h}));
  std::vector<Var> out;
  out.reserve(seq.size());
  for (Var xt : seq) {
    Var gx = linear(xt, wx, bx);
    Var gh = linear(hs, wh, bh);
    Var r = sigmoid(add(slice(gx, 1, 0, h), slice(gh, 1, 0, h)));
    Var z = sigmoid(add(slice(gx, 1, h, 2 * h), slice(gh, 1, h, 2 * h)));
    Var n = tsfool::tanh(add(slice(gx, 1, 2 * h, 3 * h), mul(r, slice(gh, 1, 2 * h, 3 * h))));
    // h' = (1 - z) * n + z * h = n + z * (h - n)
    hs = add(n, mul(z, sub(hs, n)));
    out.push_back(hs);
  }
  return out;
}

}  // namespace detail

/// Records the model graph on `tape` for input x [batch, lookback, input_dim].
inline Var build_graph(const ModelSpec& spec, Var x,
                       const std::map<std::string, Var>& p) {
  const Shape& xs = x.shape();
  if (xs.size() != 3 || xs[1] != spec.lookback || xs[2] != spec.input_dim) {
    throw ShapeError("forward: input shape " + tsfool::to_string(xs) +
                     " does not match [batch x " + std::to_string(spec.lookback) +
                     " x " + std::to_string(spec.input_dim) + "] for " +
                     spec.label());
  }
  Tape& tape = *x.tape;
  const std::size_t batch = xs[0];
  const std::size_t steps = spec.lookback;
  Var features;

  if (spec.arch == Arch::CNN) {
    Var a = x;
    for (std::size_t l = 0; l < 3; ++l) {
      const std::string name = "conv" + std::to_string(l);
      const std::size_t h = spec.hidden_widths[l];
      Var cols = im2col1d(a, spec.conv_kernel);
      Var y = relu(linear(cols, p.at(name + ".weight"), p.at(name + ".bias")));
      detail::check_finite(y, name);
      a = reshape(y, Shape{batch, steps, h});
    }
    features = reshape(a, Shape{batch, steps * spec.hidden_widths.back()});
  } else {
    std::vector<Var> seq;
    seq.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      seq.push_back(detail::step_input(x, t, batch, spec.input_dim));
    }
    for (std::size_t l = 0; l < 3; ++l) {
      const std::size_t h = spec.hidden_widths[l];
      std::string name;
      if (spec.arch == Arch::LSTM) {
        name = "lstm" + std::to_string(l);
        seq = detail::lstm_layer(tape, seq, p.at(name + ".weight"),
                                 p.at(name + ".bias"), h, batch);
      } else {
        name = "gru" + std::to_string(l);
        seq = detail::gru_layer(tape, seq, p.at(name + ".weight_x"),
                                p.at(name + ".weight_h"), p.at(name + ".bias_x"),
                                p.at(name + ".bias_h"), h, batch);
      }
      detail::check_finite(seq.back(), name);
    }
    features = seq.back();
  }

  Var out = features;
  for (std::size_t j = 0; j < spec.dense_head.size(); ++j) {
    const std::string name = "dense" + std::to_string(j);
    out = linear(out, p.at(name + ".weight"), p.at(name + ".bias"));
    if (j + 1 < spec.dense_head.size()) out = relu(out);
    detail::check_finite(out, name);
  }
  return out;
}

inline ForwardPass forward(const TrainedModel& model, const Tensor& X, Track track) {
  ForwardPass pass;
  pass.input = pass.tape->leaf(X, tracks(track, Track::kInput));
  for (const auto& [name, value] : model.params) {
    pass.params.emplace(name, pass.tape->leaf(value, tracks(track, Track::kParams)));
  }
  pass.output = build_graph(model.spec, pass.input, pass.params);
  return pass;
}

/// `record` enables gradients with respect to both the input and the parameters.
inline ForwardPass forward(const TrainedModel& model, const Tensor& X, bool record) {
  return forward(model, X, record ? Track::kAll : Track::kNone);
}

/// Windows per forward pass when no gradient is needed; bounds tape memory.
inline constexpr std::size_t kPredictChunk = 256;

namespace detail {

inline Tensor rows_of(const Tensor& X, std::size_t begin, std::size_t end) {
  const std::size_t stride = X.size() / X.dim(0);
  Shape s = X.shape();
  s[0] = end - begin;
  return Tensor(std::move(s),
                std::vector<real>(X.data().begin() + static_cast<std::ptrdiff_t>(begin * stride),
                                  X.data().begin() + static_cast<std::ptrdiff_t>(end * stride)));
}

}  // namespace detail

/// Predictions [batch, 1] for X [batch, lookback, input_dim].
inline Tensor predict(const TrainedModel& model, const Tensor& X) {
  if (X.rank() != 3) {
    throw ShapeError("predict: expected [batch x T x N], got " + tsfool::to_string(X.shape()));
  }
  const std::size_t batch = X.dim(0);
  Tensor out(Shape{batch, 1});
  for (std::size_t b = 0; b < batch; b += kPredictChunk) {
    const std::size_t e = std::min(batch, b + kPredictChunk);
    ForwardPass pass = forward(model, detail::rows_of(X, b, e), Track::kNone);
    const Tensor& y = pass.output.value();
    std::copy(y.data().begin(), y.data().end(),
              out.data().begin() + static_cast<std::ptrdiff_t>(b));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Loss

inline Var mse_loss(Var pred, Var target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: prediction " + tsfool::to_string(pred.shape()) +
                     " vs target " + tsfool::to_string(target.shape()));
  }
  return mean(square(sub(pred, target)));
}

inline double mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: prediction " + tsfool::to_string(pred.shape()) +
                     " vs target " + tsfool::to_string(target.shape()));
  }
  if (pred.size() == 0) throw ShapeError("mse_loss: empty batch");
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

}  // namespace tsfool::nn
