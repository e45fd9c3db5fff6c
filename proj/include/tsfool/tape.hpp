#pragma once

#include <cstddef>
#include <functional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tsfool/tensor.hpp"

namespace tsfool {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
};

class GradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Gradients of a scalar loss keyed by leaf handle.
class Gradients {
 public:
  const Tensor& operator[](Var leaf) const {
    auto it = grads_.find(leaf.id);
    if (it == grads_.end()) {
      throw GradientError("no gradient recorded for node " +
                          std::to_string(leaf.id) +
                          " (not a requires-grad leaf)");
    }
    return it->second;
  }
  bool contains(Var leaf) const { return grads_.count(leaf.id) != 0; }
  std::size_t size() const { return grads_.size(); }

 private:
  friend class Tape;
  std::unordered_map<std::size_t, Tensor> grads_;
};

/// Define-by-run reverse-mode tape. One tape per forward pass and per thread.
class Tape {
 public:
  /// Receives the output gradient and one accumulator per parent; an
  /// accumulator is null when that parent does not need a gradient.
  using BackwardFn =
      std::function<void(const Tensor& grad_out, std::vector<Tensor*>& grad_in)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  // Vars and recorded closures hold the tape's address.
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  Var leaf(Tensor value, bool requires_grad = false) {
    Node n;
    n.value = std::move(value);
    n.is_leaf = true;
    n.requires_grad = requires_grad;
    n.needs_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  Var constant(Tensor value) { return leaf(std::move(value), false); }

  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn) {
    Node n;
    n.value = std::move(value);
    for (std::size_t p : parents) n.needs_grad = n.needs_grad || nodes_[p].needs_grad;
    n.parents = std::move(parents);
    if (n.needs_grad) n.backward = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  bool needs_grad(std::size_t id) const { return nodes_.at(id).needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  /// Reverse sweep from a scalar loss recorded on this tape.
  Gradients backward(Var loss) const {
    if (loss.tape != this) {
      throw GradientError("backward: loss was not recorded on this tape");
    }
    const Tensor& lv = nodes_.at(loss.id).value;
    if (lv.size() != 1) {
      throw GradientError("backward: loss must be scalar, got shape " +
                          to_string(lv.shape()));
    }

    std::vector<Tensor> grads(loss.id + 1);
    grads[loss.id] = Tensor(lv.shape(), real{1});

    std::vector<Tensor*> accum;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (n.is_leaf || !n.needs_grad || grads[i].size() == 0) continue;
      accum.assign(n.parents.size(), nullptr);
      for (std::size_t k = 0; k < n.parents.size(); ++k) {
        std::size_t p = n.parents[k];
        if (!nodes_[p].needs_grad) continue;
        if (grads[p].size() == 0 && nodes_[p].value.size() != 0) {
          grads[p] = Tensor(nodes_[p].value.shape(), real{0});
        }
        accum[k] = &grads[p];
      }
      n.backward(grads[i], accum);
    }

    Gradients out;
    for (std::size_t i = 0; i <= loss.id; ++i) {
      const Node& n = nodes_[i];
      if (!n.is_leaf || !n.requires_grad) continue;
      out.grads_.emplace(i, grads[i].size() == n.value.size() && grads[i].size() != 0
                                ? std::move(grads[i])
                                : Tensor(n.value.shape(), real{0}));
    }
    // Leaves created after the loss still get a (zero) gradient of their shape.
    for (std::size_t i = loss.id + 1; i < nodes_.size(); ++i) {
      if (nodes_[i].is_leaf && nodes_[i].requires_grad) {
        out.grads_.emplace(i, Tensor(nodes_[i].value.shape(), real{0}));
      }
    }
    return out;
  }

 private:
  struct Node {
    Tensor value;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool is_leaf = false;
    bool requires_grad = false;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const {
  if (tape == nullptr) throw GradientError("Var: detached handle");
  return tape->value(id);
}

}  // namespace tsfool
