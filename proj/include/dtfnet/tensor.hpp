#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "dtfnet/error.hpp"

namespace dtfnet {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major array of doubles. Plain value type: copyable, movable,
// no views, always contiguous.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (shape_numel(shape_) != data_.size()) {
      throw ShapeMismatch("tensor_create: shape " + shape_str(shape_) +
                          " wants " + std::to_string(shape_numel(shape_)) +
                          " values, got " + std::to_string(data_.size()));
    }
  }

  static Tensor full(Shape shape, double v) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, {v}); }

  std::size_t numel() const { return data_.size(); }
  std::size_t rank() const { return shape_.size(); }
  const Shape& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // Row-major element strides.
  Shape strides() const {
    Shape st(shape_.size(), 1);
    for (std::size_t i = shape_.size(); i-- > 1;) st[i - 1] = st[i] * shape_[i];
    return st;
  }

  double& at(std::initializer_list<std::size_t> idx) {
    return data_[flat_index(idx)];
  }
  double at(std::initializer_list<std::size_t> idx) const {
    return data_[flat_index(idx)];
  }

  bool empty() const { return data_.empty(); }

 private:
  std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
    assert(idx.size() == shape_.size());
    std::size_t flat = 0, i = 0;
    const Shape st = strides();
    for (std::size_t v : idx) {
      assert(v < shape_[i]);
      flat += v * st[i++];
    }
    return flat;
  }

  Shape shape_;
  std::vector<double> data_;
};

inline bool same_shape(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape();
}

inline void check_same_shape(const Tensor& a, const Tensor& b,
                             const char* where) {
  if (!same_shape(a, b)) {
    throw ShapeMismatch(std::string(where) + ": " + shape_str(a.shape()) +
                        " vs " + shape_str(b.shape()));
  }
}

// Finiteness of every stored value is an invariant of the numeric modules;
// checked in debug builds only.
inline void debug_check_finite(const Tensor& t) {
#ifndef NDEBUG
  for (std::size_t i = 0; i < t.numel(); ++i) assert(std::isfinite(t[i]));
#else
  (void)t;
#endif
}

inline Tensor tensor_create(Shape shape, std::vector<double> data) {
  return Tensor(std::move(shape), std::move(data));
}

inline Tensor tensor_matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw ShapeMismatch("matmul: expects rank-2 operands, got " +
                        shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
  if (b.dim(0) != n) {
    throw ShapeMismatch("matmul: inner extents disagree, " +
                        shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out(Shape{m, p});
  const double* ap = a.data();
  const double* bp = b.data();
  double* op = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t k = 0; k < n; ++k) {
      const double aik = ap[i * n + k];
      const double* brow = bp + k * p;
      double* orow = op + i * p;
      for (std::size_t j = 0; j < p; ++j) orow[j] += aik * brow[j];
    }
  }
  debug_check_finite(out);
  return out;
}

inline Tensor tensor_permute(const Tensor& t, const std::vector<std::size_t>& axes) {
  const std::size_t r = t.rank();
  if (axes.size() != r) {
    throw InvalidPermutation("permute: axes size " + std::to_string(axes.size()) +
                             " for rank " + std::to_string(r));
  }
  std::vector<bool> seen(r, false);
  for (std::size_t a : axes) {
    if (a >= r || seen[a]) throw InvalidPermutation("permute: bad axis list");
    seen[a] = true;
  }
  Shape out_shape(r);
  for (std::size_t i = 0; i < r; ++i) out_shape[i] = t.dim(axes[i]);
  Tensor out(out_shape);
  if (t.numel() == 0) return out;

  const Shape in_st = t.strides();
  // Stride of output axis i in the input's flat layout.
  Shape mapped(r);
  for (std::size_t i = 0; i < r; ++i) mapped[i] = in_st[axes[i]];

  std::vector<std::size_t> idx(r, 0);
  const double* src = t.data();
  double* dst = out.data();
  const std::size_t n = t.numel();
  std::size_t src_flat = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    dst[flat] = src[src_flat];
    for (std::size_t i = r; i-- > 0;) {
      if (++idx[i] < out_shape[i]) {
        src_flat += mapped[i];
        break;
      }
      src_flat -= mapped[i] * (out_shape[i] - 1);
      idx[i] = 0;
    }
  }
  return out;
}

inline Tensor tensor_reshape(const Tensor& t, Shape shape) {
  if (shape_numel(shape) != t.numel()) {
    throw ShapeMismatch("reshape: " + shape_str(t.shape()) + " -> " +
                        shape_str(shape));
  }
  return Tensor(std::move(shape),
                std::vector<double>(t.data(), t.data() + t.numel()));
}

inline std::vector<std::size_t> inverse_permutation(
    const std::vector<std::size_t>& axes) {
  std::vector<std::size_t> inv(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inv[axes[i]] = i;
  return inv;
}

}  // namespace dtfnet
