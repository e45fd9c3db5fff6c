#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "tsfool/tape.hpp"
#include "tsfool/tensor.hpp"

// Differentiable primitives. Every op records a node whose backward rule
// accumulates into the parents' gradients. Broadcasting is limited to a
// rank-0 operand against a tensor; any other shape mismatch throws.
namespace tsfool {

namespace detail {

using MatrixR =
    Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatrixR>;
using ConstMapR = Eigen::Map<const MatrixR>;
using ConstVecMap = Eigen::Map<const Eigen::Matrix<real, Eigen::Dynamic, 1>>;
using VecMap = Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, 1>>;

inline Tape* common_tape(const char* op, Var a, Var b) {
  if (a.tape == nullptr || a.tape != b.tape) {
    throw GradientError(std::string(op) + ": operands live on different tapes");
  }
  return a.tape;
}

[[noreturn]] inline void shape_fail(const char* op, const Shape& a,
                                    const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + to_string(a) +
                   " and " + to_string(b));
}

inline bool is_scalar(const Tensor& t) { return t.rank() == 0; }

inline void require_rank(const char* op, const Tensor& t, std::size_t rank) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " +
                     std::to_string(rank) + ", got shape " +
                     to_string(t.shape()));
  }
}

// Reduce a full-size gradient onto a rank-0 operand when it was broadcast.
inline void accumulate(Tensor& dst, const Tensor& src, real factor = 1) {
  if (dst.size() == src.size()) {
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] += factor * src[i];
  } else {
    real s = 0;
    for (real v : src.data()) s += v;
    dst[0] += factor * s;
  }
}

template <class F>
Tensor binary_elementwise(const char* op, Var a, Var b, F f) {
  common_tape(op, a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Shape out_shape;
  if (av.shape() == bv.shape()) {
    out_shape = av.shape();
  } else if (is_scalar(av)) {
    out_shape = bv.shape();
  } else if (is_scalar(bv)) {
    out_shape = av.shape();
  } else {
    shape_fail(op, av.shape(), bv.shape());
  }
  Tensor out(out_shape);
  const std::size_t n = out.size();
  const bool sa = av.size() == 1 && n != 1;
  const bool sb = bv.size() == 1 && n != 1;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = f(av[sa ? 0 : i], bv[sb ? 0 : i]);
  }
  return out;
}

// local_derivative(x, y) gives dy/dx from the input and output values.
template <class F, class D>
Var unary_elementwise(Var a, F f, D local_derivative) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  Tape* tape = a.tape;
  const std::size_t ai = a.id;
  const std::size_t yi = tape->size();
  return tape->record(
      std::move(out), {ai},
      [tape, ai, yi, local_derivative](const Tensor& g,
                                       std::vector<Tensor*>& gin) {
        const Tensor& x = tape->value(ai);
        const Tensor& y = tape->value(yi);
        Tensor& dx = *gin[0];
        for (std::size_t i = 0; i < g.size(); ++i) {
          dx[i] += g[i] * local_derivative(x[i], y[i]);
        }
      });
}

inline std::size_t outer_extent(const Shape& s, std::size_t axis) {
  std::size_t n = 1;
  for (std::size_t i = 0; i < axis; ++i) n *= s[i];
  return n;
}

inline std::size_t inner_extent(const Shape& s, std::size_t axis) {
  std::size_t n = 1;
  for (std::size_t i = axis + 1; i < s.size(); ++i) n *= s[i];
  return n;
}

}  // namespace detail

inline Var add(Var a, Var b) {
  Tensor out = detail::binary_elementwise("add", a, b,
                                          [](real x, real y) { return x + y; });
  return a.tape->record(std::move(out), {a.id, b.id},
                        [](const Tensor& g, std::vector<Tensor*>& gin) {
                          if (gin[0]) detail::accumulate(*gin[0], g);
                          if (gin[1]) detail::accumulate(*gin[1], g);
                        });
}

inline Var sub(Var a, Var b) {
  Tensor out = detail::binary_elementwise("sub", a, b,
                                          [](real x, real y) { return x - y; });
  return a.tape->record(std::move(out), {a.id, b.id},
                        [](const Tensor& g, std::vector<Tensor*>& gin) {
                          if (gin[0]) detail::accumulate(*gin[0], g);
                          if (gin[1]) detail::accumulate(*gin[1], g, -1);
                        });
}

inline Var mul(Var a, Var b) {
  Tensor out = detail::binary_elementwise("mul", a, b,
                                          [](real x, real y) { return x * y; });
  Tape* tape = a.tape;
  const std::size_t ai = a.id, bi = b.id;
  return tape->record(
      std::move(out), {ai, bi},
      [tape, ai, bi](const Tensor& g, std::vector<Tensor*>& gin) {
        const Tensor& av = tape->value(ai);
        const Tensor& bv = tape->value(bi);
        const std::size_t n = g.size();
        const bool sa = av.size() == 1 && n != 1;
        const bool sb = bv.size() == 1 && n != 1;
        if (gin[0]) {
          Tensor ga(g.shape());
          for (std::size_t i = 0; i < n; ++i) ga[i] = g[i] * bv[sb ? 0 : i];
          detail::accumulate(*gin[0], ga);
        }
        if (gin[1]) {
          Tensor gb(g.shape());
          for (std::size_t i = 0; i < n; ++i) gb[i] = g[i] * av[sa ? 0 : i];
          detail::accumulate(*gin[1], gb);
        }
      });
}

/// scale * a + shift with constant coefficients.
inline Var affine(Var a, real scale, real shift) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = scale * av[i] + shift;
  return a.tape->record(std::move(out), {a.id},
                        [scale](const Tensor& g, std::vector<Tensor*>& gin) {
                          detail::accumulate(*gin[0], g, scale);
                        });
}

inline Var sigmoid(Var a) {
  return detail::unary_elementwise(
      a, [](real x) { return real{1} / (real{1} + std::exp(-x)); },
      [](real, real y) { return y * (real{1} - y); });
}

inline Var tanh(Var a) {
  return detail::unary_elementwise(
      a, [](real x) { return std::tanh(x); },
      [](real, real y) { return real{1} - y * y; });
}

inline Var relu(Var a) {
  return detail::unary_elementwise(
      a, [](real x) { return x > 0 ? x : real{0}; },
      [](real x, real) { return x > 0 ? real{1} : real{0}; });
}

inline Var square(Var a) {
  return detail::unary_elementwise(
      a, [](real x) { return x * x; }, [](real x, real) { return 2 * x; });
}

inline Var sum(Var a) {
  real s = 0;
  for (real v : a.value().data()) s += v;
  return a.tape->record(Tensor::scalar(s), {a.id},
                        [](const Tensor& g, std::vector<Tensor*>& gin) {
                          Tensor& dx = *gin[0];
                          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[0];
                        });
}

inline Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) throw ShapeError("mean: empty tensor");
  real s = 0;
  for (real v : a.value().data()) s += v;
  const real inv = real{1} / static_cast<real>(n);
  return a.tape->record(Tensor::scalar(s * inv), {a.id},
                        [inv](const Tensor& g, std::vector<Tensor*>& gin) {
                          Tensor& dx = *gin[0];
                          for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += g[0] * inv;
                        });
}

/// [m,k] x [k,n] -> [m,n]
inline Var matmul(Var a, Var b) {
  Tape* tape = detail::common_tape("matmul", a, b);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    detail::shape_fail("matmul", av.shape(), bv.shape());
  }
  const auto m = static_cast<Eigen::Index>(av.dim(0));
  const auto k = static_cast<Eigen::Index>(av.dim(1));
  const auto n = static_cast<Eigen::Index>(bv.dim(1));
  Tensor out(Shape{av.dim(0), bv.dim(1)});
  detail::MapR(out.data().data(), m, n).noalias() =
      detail::ConstMapR(av.data().data(), m, k) *
      detail::ConstMapR(bv.data().data(), k, n);
  const std::size_t ai = a.id, bi = b.id;
  return tape->record(
      std::move(out), {ai, bi},
      [tape, ai, bi, m, k, n](const Tensor& g, std::vector<Tensor*>& gin) {
        detail::ConstMapR G(g.data().data(), m, n);
        if (gin[0]) {
          detail::MapR(gin[0]->data().data(), m, k).noalias() +=
              G * detail::ConstMapR(tape->value(bi).data().data(), k, n).transpose();
        }
        if (gin[1]) {
          detail::MapR(gin[1]->data().data(), k, n).noalias() +=
              detail::ConstMapR(tape->value(ai).data().data(), m, k).transpose() * G;
        }
      });
}

/// Affine map x W^T + b for x [batch,in], W [out,in], b [out].
inline Var linear(Var x, Var w, Var b) {
  Tape* tape = detail::common_tape("linear", x, w);
  detail::common_tape("linear", x, b);
  const Tensor& xv = x.value();
  const Tensor& wv = w.value();
  const Tensor& bv = b.value();
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1)) {
    detail::shape_fail("linear", xv.shape(), wv.shape());
  }
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(0)) {
    detail::shape_fail("linear(bias)", wv.shape(), bv.shape());
  }
  const auto batch = static_cast<Eigen::Index>(xv.dim(0));
  const auto in = static_cast<Eigen::Index>(xv.dim(1));
  const auto outd = static_cast<Eigen::Index>(wv.dim(0));
  Tensor out(Shape{xv.dim(0), wv.dim(0)});
  detail::MapR Y(out.data().data(), batch, outd);
  Y.noalias() = detail::ConstMapR(xv.data().data(), batch, in) *
                detail::ConstMapR(wv.data().data(), outd, in).transpose();
  Y.rowwise() += detail::ConstVecMap(bv.data().data(), outd).transpose();
  const std::size_t xi = x.id, wi = w.id;
  return tape->record(
      std::move(out), {x.id, w.id, b.id},
      [tape, xi, wi, batch, in, outd](const Tensor& g,
                                      std::vector<Tensor*>& gin) {
        detail::ConstMapR G(g.data().data(), batch, outd);
        if (gin[0]) {
          detail::MapR(gin[0]->data().data(), batch, in).noalias() +=
              G * detail::ConstMapR(tape->value(wi).data().data(), outd, in);
        }
        if (gin[1]) {
          detail::MapR(gin[1]->data().data(), outd, in).noalias() +=
              G.transpose() * detail::ConstMapR(tape->value(xi).data().data(), batch, in);
        }
        if (gin[2]) {
          detail::VecMap(gin[2]->data().data(), outd) +=
              G.colwise().sum().transpose();
        }
      });
}

inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Tape* tape = parts.front().tape;
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw ShapeError("concat: axis " + std::to_string(axis) +
                     " out of range for shape " + to_string(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  const std::size_t inner = detail::inner_extent(first, axis);
  for (const Var& p : parts) {
    detail::common_tape("concat", parts.front(), p);
    const Shape& s = p.shape();
    bool ok = s.size() == first.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) ok = false;
    }
    if (!ok) detail::shape_fail("concat", first, s);
    out_shape[axis] += s[axis];
    widths.push_back(s[axis] * inner);
    ids.push_back(p.id);
  }
  const std::size_t outer = detail::outer_extent(first, axis);
  const std::size_t row = out_shape[axis] * inner;
  Tensor out(out_shape);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& pv = parts[k].value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data().begin() + static_cast<std::ptrdiff_t>(o * widths[k]),
                  widths[k],
                  out.data().begin() + static_cast<std::ptrdiff_t>(o * row + offset));
    }
    offset += widths[k];
  }
  return tape->record(
      std::move(out), ids,
      [widths, outer, row](const Tensor& g, std::vector<Tensor*>& gin) {
        std::size_t off = 0;
        for (std::size_t k = 0; k < gin.size(); ++k) {
          if (gin[k]) {
            Tensor& d = *gin[k];
            for (std::size_t o = 0; o < outer; ++o) {
              for (std::size_t j = 0; j < widths[k]; ++j) {
                d[o * widths[k] + j] += g[o * row + off + j];
              }
            }
          }
          off += widths[k];
        }
      });
}

/// Elements [begin, end) along one axis.
inline Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = a.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " invalid for shape " +
                     to_string(s));
  }
  const std::size_t outer = detail::outer_extent(s, axis);
  const std::size_t inner = detail::inner_extent(s, axis);
  const std::size_t src_row = s[axis] * inner;
  const std::size_t width = (end - begin) * inner;
  const std::size_t off = begin * inner;
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const Tensor& av = a.value();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < width; ++j) {
      out[o * width + j] = av[o * src_row + off + j];
    }
  }
  return a.tape->record(
      std::move(out), {a.id},
      [outer, width, src_row, off](const Tensor& g, std::vector<Tensor*>& gin) {
        Tensor& d = *gin[0];
        for (std::size_t o = 0; o < outer; ++o) {
          for (std::size_t j = 0; j < width; ++j) {
            d[o * src_row + off + j] += g[o * width + j];
          }
        }
      });
}

inline Var reshape(Var a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return a.tape->record(std::move(out), {a.id},
                        [](const Tensor& g, std::vector<Tensor*>& gin) {
                          detail::accumulate(*gin[0], g);
                        });
}

/// Zero-padded ("same") patch extraction for 1-D convolution:
/// [batch, steps, channels] -> [batch*steps, kernel*channels], where column
/// j*channels + c of row (b, t) holds x[b, t + j - kernel/2, c].
inline Var im2col1d(Var x, std::size_t kernel) {
  const Tensor& xv = x.value();
  detail::require_rank("im2col1d", xv, 3);
  if (kernel == 0 || kernel % 2 == 0) {
    throw ShapeError("im2col1d: kernel must be a positive odd number, got " +
                     std::to_string(kernel));
  }
  const std::size_t batch = xv.dim(0), steps = xv.dim(1), ch = xv.dim(2);
  const std::size_t half = kernel / 2;
  const std::size_t cols = kernel * ch;
  Tensor out(Shape{batch * steps, cols});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      real* dst = out.data().data() + (b * steps + t) * cols;
      for (std::size_t j = 0; j < kernel; ++j) {
        const std::ptrdiff_t src_t = static_cast<std::ptrdiff_t>(t + j) -
                                     static_cast<std::ptrdiff_t>(half);
        if (src_t < 0 || src_t >= static_cast<std::ptrdiff_t>(steps)) continue;
        const real* src = xv.data().data() +
                          (b * steps + static_cast<std::size_t>(src_t)) * ch;
        std::copy_n(src, ch, dst + j * ch);
      }
    }
  }
  return x.tape->record(
      std::move(out), {x.id},
      [batch, steps, ch, kernel, half, cols](const Tensor& g,
                                             std::vector<Tensor*>& gin) {
        Tensor& d = *gin[0];
        for (std::size_t b = 0; b < batch; ++b) {
          for (std::size_t t = 0; t < steps; ++t) {
            const real* src = g.data().data() + (b * steps + t) * cols;
            for (std::size_t j = 0; j < kernel; ++j) {
              const std::ptrdiff_t dst_t = static_cast<std::ptrdiff_t>(t + j) -
                                           static_cast<std::ptrdiff_t>(half);
              if (dst_t < 0 || dst_t >= static_cast<std::ptrdiff_t>(steps)) continue;
              real* dst = d.data().data() +
                          (b * steps + static_cast<std::size_t>(dst_t)) * ch;
              for (std::size_t c = 0; c < ch; ++c) dst[c] += src[j * ch + c];
            }
          }
        }
      });
}

}  // namespace tsfool
