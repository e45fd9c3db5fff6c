#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tsfool {

#ifdef TSFOOL_USE_FLOAT
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<std::size_t>;

class ShapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array. A rank-0 tensor holds a single scalar.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, real fill = 0)
      : shape_(std::move(shape)), data_(numel(shape_), fill) {}

  Tensor(Shape shape, std::vector<real> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel(shape_) != data_.size()) {
      throw ShapeError("Tensor: shape " + to_string(shape_) + " needs " +
                       std::to_string(numel(shape_)) + " values, got " +
                       std::to_string(data_.size()));
    }
  }

  static Tensor scalar(real v) { return Tensor(Shape{}, std::vector<real>{v}); }

  static Tensor vector(std::initializer_list<real> values) {
    return Tensor(Shape{values.size()}, std::vector<real>(values));
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<real> values) {
    return Tensor(Shape{rows, cols}, std::vector<real>(values));
  }

  static Tensor identity(std::size_t n) {
    Tensor t(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = 1;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw ShapeError("Tensor::dim: axis " + std::to_string(axis) +
                       " out of range for shape " + to_string(shape_));
    }
    return shape_[axis];
  }

  std::vector<real>& data() { return data_; }
  const std::vector<real>& data() const { return data_; }

  real& operator[](std::size_t flat) { return data_[flat]; }
  real operator[](std::size_t flat) const { return data_[flat]; }

  real& at(std::initializer_list<std::size_t> index) {
    return data_[offset(index)];
  }
  real at(std::initializer_list<std::size_t> index) const {
    return data_[offset(index)];
  }

  real item() const {
    if (data_.size() != 1) {
      throw ShapeError("Tensor::item: tensor of shape " + to_string(shape_) +
                       " is not a scalar");
    }
    return data_[0];
  }

  /// Same data viewed under a new shape with the same element count.
  Tensor reshaped(Shape shape) const {
    if (numel(shape) != data_.size()) {
      throw ShapeError("reshape: cannot view " + to_string(shape_) + " as " +
                       to_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  bool operator==(const Tensor& other) const = default;

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != shape_.size()) {
      throw std::out_of_range("Tensor::at: rank " +
                              std::to_string(index.size()) +
                              " index into shape " + to_string(shape_));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= shape_[axis]) {
        throw std::out_of_range("Tensor::at: index " + std::to_string(i) +
                                " out of range on axis " +
                                std::to_string(axis) + " of " +
                                to_string(shape_));
      }
      flat = flat * shape_[axis] + i;
      ++axis;
    }
    return flat;
  }

  Shape shape_;
  std::vector<real> data_;
};

}  // namespace tsfool
