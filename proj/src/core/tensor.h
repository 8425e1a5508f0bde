// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense 4-d tensor in NCHW layout. Vectors and matrices are represented as
// (n, c, 1, 1): a batch of n feature vectors of width c. The scalar type is
// a template parameter so gradient checks can run the same code in double
// precision while training runs in float.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "core/errors.h"

namespace contsup {

struct Shape {
  int c = 0;
  int h = 0;
  int w = 0;

  bool operator==(const Shape& o) const {
    return c == o.c && h == o.h && w == o.w;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }
  int64_t numel() const {
    return static_cast<int64_t>(c) * h * w;
  }
  std::string str() const {
    return "(" + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }
};

template <typename T>
class TensorT {
 public:
  TensorT() = default;
  TensorT(int n, int c, int h, int w)
      : n_(n), c_(c), h_(h), w_(w),
        v_(static_cast<size_t>(n) * c * h * w, T(0)) {
    if (n < 0 || c < 0 || h < 0 || w < 0) {
      throw InvariantViolation("tensor dimensions must be non-negative");
    }
  }
  TensorT(int n, const Shape& s) : TensorT(n, s.c, s.h, s.w) {}

  int n() const { return n_; }
  int c() const { return c_; }
  int h() const { return h_; }
  int w() const { return w_; }
  Shape shape() const { return {c_, h_, w_}; }
  int64_t numel() const { return static_cast<int64_t>(v_.size()); }
  bool empty() const { return v_.empty(); }

  // Feature width when the tensor is viewed as (n, features).
  int64_t features() const { return static_cast<int64_t>(c_) * h_ * w_; }

  T* data() { return v_.data(); }
  const T* data() const { return v_.data(); }
  std::vector<T>& vec() { return v_; }
  const std::vector<T>& vec() const { return v_; }

  T& at(int n, int c, int h, int w) {
    return v_[((static_cast<size_t>(n) * c_ + c) * h_ + h) * w_ + w];
  }
  const T& at(int n, int c, int h, int w) const {
    return v_[((static_cast<size_t>(n) * c_ + c) * h_ + h) * w_ + w];
  }
  T& operator[](size_t i) { return v_[i]; }
  const T& operator[](size_t i) const { return v_[i]; }

  void fill(T value) {
    for (auto& x : v_) x = value;
  }
  void zero() { fill(T(0)); }

  bool same_shape(const TensorT& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

  void add_(const TensorT& o) {
    if (!same_shape(o)) {
      throw InvariantViolation("tensor add: shape mismatch " + shape_str() +
                               " vs " + o.shape_str());
    }
    for (size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
  }

  void scale_(T s) {
    for (auto& x : v_) x *= s;
  }

  // Reinterprets the layout without moving data; element count must match.
  TensorT reshaped(int n, int c, int h, int w) const {
    TensorT out = *this;
    if (static_cast<int64_t>(n) * c * h * w != numel()) {
      throw InvariantViolation("reshape: element count mismatch");
    }
    out.n_ = n;
    out.c_ = c;
    out.h_ = h;
    out.w_ = w;
    return out;
  }

  template <typename U>
  TensorT<U> cast() const {
    TensorT<U> out(n_, c_, h_, w_);
    for (size_t i = 0; i < v_.size(); ++i) out[i] = static_cast<U>(v_[i]);
    return out;
  }

  std::string shape_str() const {
    return "(" + std::to_string(n_) + "," + std::to_string(c_) + "," +
           std::to_string(h_) + "," + std::to_string(w_) + ")";
  }

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  std::vector<T> v_;
};

using Tensor = TensorT<float>;

// A named learnable tensor with its gradient and optimizer momentum buffer.
template <typename T>
struct ParamT {
  std::string name;
  TensorT<T> value;
  TensorT<T> grad;
  TensorT<T> momentum;

  void init_buffers() {
    grad = TensorT<T>(value.n(), value.c(), value.h(), value.w());
    momentum = TensorT<T>(value.n(), value.c(), value.h(), value.w());
  }
  void zero_grad() { grad.zero(); }
};

using Param = ParamT<float>;

}  // namespace contsup
