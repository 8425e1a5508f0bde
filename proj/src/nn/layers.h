// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Neural network layers with explicit forward/backward passes, NCHW layout,
// single-threaded and deterministic. Each layer caches what its backward
// pass needs during forward; backward may be invoked several times per
// forward (gradients accumulate), which the training engine relies on when
// a later module sends gradient back through a stored context feature.
//
// Templated on the scalar type: training instantiates float, the gradient
// check suite instantiates double so finite differences are meaningful at
// tight tolerances.

#pragma once

#include <Eigen/Core>

#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "core/errors.h"
#include "core/rng.h"
#include "core/tensor.h"

namespace contsup {

template <typename T>
using EigMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;
template <typename T>
using RowMajorMap =
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstRowMajorMap = Eigen::Map<
    const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual TensorT<T> forward(const TensorT<T>& x, bool train) = 0;

  // Returns the gradient with respect to the layer input and accumulates
  // parameter gradients. Valid only after a forward pass; may be called
  // repeatedly against the same cached forward.
  virtual TensorT<T> backward(const TensorT<T>& grad_out) = 0;

  virtual void collect_params(std::vector<ParamT<T>*>& out) { (void)out; }

  // Non-learnable persistent state (normalization running statistics).
  virtual void collect_buffers(std::vector<TensorT<T>*>& out) { (void)out; }

  virtual void init(Rng& rng) { (void)rng; }
};

// ---------------------------------------------------------------------------
// Convolution

template <typename T>
class Conv2d : public Layer<T> {
 public:
  Conv2d(int cin, int cout, int kernel, int stride, int pad, bool bias)
      : cin_(cin), cout_(cout), k_(kernel), stride_(stride), pad_(pad),
        has_bias_(bias) {
    weight_.value = TensorT<T>(cout, cin, k_, k_);
    weight_.init_buffers();
    if (has_bias_) {
      bias_.value = TensorT<T>(1, cout, 1, 1);
      bias_.init_buffers();
    }
  }

  void init(Rng& rng) override {
    // He initialization scaled by fan-out.
    const double std = std::sqrt(2.0 / (static_cast<double>(cout_) * k_ * k_));
    for (auto& w : weight_.value.vec()) w = static_cast<T>(rng.normal() * std);
    if (has_bias_) bias_.value.zero();
  }

  int out_dim(int in) const { return (in + 2 * pad_ - k_) / stride_ + 1; }

  TensorT<T> forward(const TensorT<T>& x, bool) override {
    if (x.c() != cin_) {
      throw InvariantViolation("conv2d: expected " + std::to_string(cin_) +
                               " input channels, got " + x.shape_str());
    }
    x_ = x;
    const int ho = out_dim(x.h()), wo = out_dim(x.w());
    if (ho <= 0 || wo <= 0) {
      throw InvariantViolation("conv2d: output would be empty for input " +
                               x.shape_str());
    }
    TensorT<T> out(x.n(), cout_, ho, wo);
    const int kdim = cin_ * k_ * k_;
    const int m = ho * wo;
    ConstRowMajorMap<T> wm(weight_.value.data(), cout_, kdim);
    EigMat<T> col(kdim, m);
    for (int img = 0; img < x.n(); ++img) {
      im2col(x, img, ho, wo, col);
      RowMajorMap<T> om(out.data() + static_cast<size_t>(img) * cout_ * m,
                        cout_, m);
      om.noalias() = wm * col;
      if (has_bias_) {
        for (int co = 0; co < cout_; ++co) {
          om.row(co).array() += bias_.value[co];
        }
      }
    }
    return out;
  }

  TensorT<T> backward(const TensorT<T>& g) override {
    const int ho = g.h(), wo = g.w();
    const int kdim = cin_ * k_ * k_;
    const int m = ho * wo;
    TensorT<T> dx(x_.n(), x_.c(), x_.h(), x_.w());
    ConstRowMajorMap<T> wm(weight_.value.data(), cout_, kdim);
    RowMajorMap<T> dwm(weight_.grad.data(), cout_, kdim);
    EigMat<T> col(kdim, m);
    EigMat<T> dcol(kdim, m);
    for (int img = 0; img < g.n(); ++img) {
      ConstRowMajorMap<T> gm(g.data() + static_cast<size_t>(img) * cout_ * m,
                             cout_, m);
      im2col(x_, img, ho, wo, col);
      dwm.noalias() += gm * col.transpose();
      if (has_bias_) {
        for (int co = 0; co < cout_; ++co) bias_.grad[co] += gm.row(co).sum();
      }
      dcol.noalias() = wm.transpose() * gm;
      col2im(dcol, img, ho, wo, dx);
    }
    return dx;
  }

  void collect_params(std::vector<ParamT<T>*>& out) override {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

  ParamT<T>& weight() { return weight_; }
  const ParamT<T>& weight() const { return weight_; }
  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }
  int kernel() const { return k_; }

 private:
  void im2col(const TensorT<T>& x, int img, int ho, int wo,
              EigMat<T>& col) const {
    const int hin = x.h(), win = x.w();
    for (int ci = 0; ci < cin_; ++ci) {
      for (int ki = 0; ki < k_; ++ki) {
        for (int kj = 0; kj < k_; ++kj) {
          const int row = (ci * k_ + ki) * k_ + kj;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride_ - pad_ + ki;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride_ - pad_ + kj;
              col(row, oy * wo + ox) =
                  (iy >= 0 && iy < hin && ix >= 0 && ix < win)
                      ? x.at(img, ci, iy, ix)
                      : T(0);
            }
          }
        }
      }
    }
  }

  void col2im(const EigMat<T>& dcol, int img, int ho, int wo,
              TensorT<T>& dx) const {
    const int hin = dx.h(), win = dx.w();
    for (int ci = 0; ci < cin_; ++ci) {
      for (int ki = 0; ki < k_; ++ki) {
        for (int kj = 0; kj < k_; ++kj) {
          const int row = (ci * k_ + ki) * k_ + kj;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride_ - pad_ + ki;
            if (iy < 0 || iy >= hin) continue;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride_ - pad_ + kj;
              if (ix < 0 || ix >= win) continue;
              dx.at(img, ci, iy, ix) += dcol(row, oy * wo + ox);
            }
          }
        }
      }
    }
  }

  int cin_, cout_, k_, stride_, pad_;
  bool has_bias_;
  ParamT<T> weight_;
  ParamT<T> bias_;
  TensorT<T> x_;
};

// ---------------------------------------------------------------------------
// Batch normalization

template <typename T>
class BatchNorm2d : public Layer<T> {
 public:
  // gamma_init 0 gives an identity-silencing start: the layer output is
  // exactly zero until training moves the scale.
  explicit BatchNorm2d(int channels, double gamma_init = 1.0)
      : c_(channels), gamma_init_(gamma_init) {
    gamma_.value = TensorT<T>(1, c_, 1, 1);
    gamma_.init_buffers();
    beta_.value = TensorT<T>(1, c_, 1, 1);
    beta_.init_buffers();
    running_mean_ = TensorT<T>(1, c_, 1, 1);
    running_var_ = TensorT<T>(1, c_, 1, 1);
    running_var_.fill(T(1));
  }

  void init(Rng&) override {
    gamma_.value.fill(static_cast<T>(gamma_init_));
    beta_.value.zero();
    running_mean_.zero();
    running_var_.fill(T(1));
  }

  TensorT<T> forward(const TensorT<T>& x, bool train) override {
    if (x.c() != c_) {
      throw InvariantViolation("batchnorm: channel mismatch, expected " +
                               std::to_string(c_) + ", got " + x.shape_str());
    }
    train_cache_ = train;
    const int64_t count = static_cast<int64_t>(x.n()) * x.h() * x.w();
    xhat_ = TensorT<T>(x.n(), x.c(), x.h(), x.w());
    invstd_.assign(c_, 0.0);
    TensorT<T> out(x.n(), x.c(), x.h(), x.w());
    const int hw = x.h() * x.w();

    for (int ch = 0; ch < c_; ++ch) {
      double mean, var;
      if (train) {
        double sum = 0.0, sumsq = 0.0;
        for (int img = 0; img < x.n(); ++img) {
          const T* p = x.data() + (static_cast<size_t>(img) * c_ + ch) * hw;
          for (int i = 0; i < hw; ++i) {
            sum += p[i];
            sumsq += static_cast<double>(p[i]) * p[i];
          }
        }
        mean = sum / count;
        var = sumsq / count - mean * mean;
        if (var < 0) var = 0;  // guard rounding
        const double unbiased =
            count > 1 ? var * count / (count - 1) : var;
        running_mean_[ch] = static_cast<T>((1.0 - momentum_) * running_mean_[ch] +
                                           momentum_ * mean);
        running_var_[ch] = static_cast<T>((1.0 - momentum_) * running_var_[ch] +
                                          momentum_ * unbiased);
      } else {
        mean = running_mean_[ch];
        var = running_var_[ch];
      }
      const double istd = 1.0 / std::sqrt(var + eps_);
      invstd_[ch] = istd;
      const T gam = gamma_.value[ch], bet = beta_.value[ch];
      for (int img = 0; img < x.n(); ++img) {
        const size_t base = (static_cast<size_t>(img) * c_ + ch) * hw;
        const T* p = x.data() + base;
        T* xh = xhat_.data() + base;
        T* o = out.data() + base;
        for (int i = 0; i < hw; ++i) {
          xh[i] = static_cast<T>((p[i] - mean) * istd);
          o[i] = gam * xh[i] + bet;
        }
      }
    }
    return out;
  }

  TensorT<T> backward(const TensorT<T>& g) override {
    const int hw = g.h() * g.w();
    const int64_t count = static_cast<int64_t>(g.n()) * hw;
    TensorT<T> dx(g.n(), g.c(), g.h(), g.w());
    for (int ch = 0; ch < c_; ++ch) {
      double sum_g = 0.0, sum_gx = 0.0;
      for (int img = 0; img < g.n(); ++img) {
        const size_t base = (static_cast<size_t>(img) * c_ + ch) * hw;
        const T* gp = g.data() + base;
        const T* xh = xhat_.data() + base;
        for (int i = 0; i < hw; ++i) {
          sum_g += gp[i];
          sum_gx += static_cast<double>(gp[i]) * xh[i];
        }
      }
      gamma_.grad[ch] += static_cast<T>(sum_gx);
      beta_.grad[ch] += static_cast<T>(sum_g);
      const double gam = gamma_.value[ch];
      const double istd = invstd_[ch];
      if (train_cache_) {
        const double mg = sum_g / count;
        const double mgx = sum_gx / count;
        for (int img = 0; img < g.n(); ++img) {
          const size_t base = (static_cast<size_t>(img) * c_ + ch) * hw;
          const T* gp = g.data() + base;
          const T* xh = xhat_.data() + base;
          T* dp = dx.data() + base;
          for (int i = 0; i < hw; ++i) {
            dp[i] = static_cast<T>(gam * istd * (gp[i] - mg - xh[i] * mgx));
          }
        }
      } else {
        for (int img = 0; img < g.n(); ++img) {
          const size_t base = (static_cast<size_t>(img) * c_ + ch) * hw;
          const T* gp = g.data() + base;
          T* dp = dx.data() + base;
          for (int i = 0; i < hw; ++i) {
            dp[i] = static_cast<T>(gam * istd * gp[i]);
          }
        }
      }
    }
    return dx;
  }

  void collect_params(std::vector<ParamT<T>*>& out) override {
    out.push_back(&gamma_);
    out.push_back(&beta_);
  }
  void collect_buffers(std::vector<TensorT<T>*>& out) override {
    out.push_back(&running_mean_);
    out.push_back(&running_var_);
  }

  ParamT<T>& gamma() { return gamma_; }

 private:
  int c_;
  double gamma_init_;
  double eps_ = 1e-5;
  double momentum_ = 0.1;
  ParamT<T> gamma_, beta_;
  TensorT<T> running_mean_, running_var_;
  TensorT<T> xhat_;
  std::vector<double> invstd_;
  bool train_cache_ = true;
};

// ---------------------------------------------------------------------------
// Pointwise activations

template <typename T>
class ReLU : public Layer<T> {
 public:
  TensorT<T> forward(const TensorT<T>& x, bool) override {
    x_ = x;
    TensorT<T> y = x;
    for (auto& v : y.vec()) v = v > T(0) ? v : T(0);
    return y;
  }
  // The subgradient at exactly zero is taken as one, not zero. Context
  // adapters start with a zero-scaled final normalization, so their entire
  // pre-activation is exactly zero at first; a zero subgradient there would
  // leave them without gradient forever.
  TensorT<T> backward(const TensorT<T>& g) override {
    TensorT<T> dx = g;
    for (int64_t i = 0; i < dx.numel(); ++i) {
      if (x_[i] < T(0)) dx[i] = T(0);
    }
    return dx;
  }

 private:
  TensorT<T> x_;
};

template <typename T>
class Sigmoid : public Layer<T> {
 public:
  TensorT<T> forward(const TensorT<T>& x, bool) override {
    y_ = x;
    for (auto& v : y_.vec()) {
      v = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
    }
    return y_;
  }
  TensorT<T> backward(const TensorT<T>& g) override {
    TensorT<T> dx = g;
    for (int64_t i = 0; i < dx.numel(); ++i) {
      dx[i] *= y_[i] * (T(1) - y_[i]);
    }
    return dx;
  }

 private:
  TensorT<T> y_;
};

// ---------------------------------------------------------------------------
// Linear

template <typename T>
class Linear : public Layer<T> {
 public:
  Linear(int in_features, int out_features, bool bias = true)
      : in_(in_features), out_(out_features), has_bias_(bias) {
    weight_.value = TensorT<T>(out_, in_, 1, 1);
    weight_.init_buffers();
    if (has_bias_) {
      bias_.value = TensorT<T>(1, out_, 1, 1);
      bias_.init_buffers();
    }
  }

  void init(Rng& rng) override {
    const double std = std::sqrt(2.0 / in_);
    for (auto& w : weight_.value.vec()) w = static_cast<T>(rng.normal() * std);
    if (has_bias_) bias_.value.zero();
  }

  // Input is viewed as (n, features); any (c, h, w) factorization with the
  // right element count is accepted.
  TensorT<T> forward(const TensorT<T>& x, bool) override {
    if (x.features() != in_) {
      throw InvariantViolation("linear: expected " + std::to_string(in_) +
                               " features, got " + x.shape_str());
    }
    x_ = x;
    TensorT<T> out(x.n(), out_, 1, 1);
    ConstRowMajorMap<T> xm(x.data(), x.n(), in_);
    ConstRowMajorMap<T> wm(weight_.value.data(), out_, in_);
    RowMajorMap<T> om(out.data(), x.n(), out_);
    om.noalias() = xm * wm.transpose();
    if (has_bias_) {
      for (int i = 0; i < x.n(); ++i) {
        for (int j = 0; j < out_; ++j) om(i, j) += bias_.value[j];
      }
    }
    return out;
  }

  TensorT<T> backward(const TensorT<T>& g) override {
    TensorT<T> dx(x_.n(), x_.c(), x_.h(), x_.w());
    ConstRowMajorMap<T> gm(g.data(), g.n(), out_);
    ConstRowMajorMap<T> xm(x_.data(), x_.n(), in_);
    ConstRowMajorMap<T> wm(weight_.value.data(), out_, in_);
    RowMajorMap<T> dwm(weight_.grad.data(), out_, in_);
    RowMajorMap<T> dxm(dx.data(), dx.n(), in_);
    dwm.noalias() += gm.transpose() * xm;
    dxm.noalias() = gm * wm;
    if (has_bias_) {
      for (int i = 0; i < g.n(); ++i) {
        for (int j = 0; j < out_; ++j) bias_.grad[j] += gm(i, j);
      }
    }
    return dx;
  }

  void collect_params(std::vector<ParamT<T>*>& out) override {
    out.push_back(&weight_);
    if (has_bias_) out.push_back(&bias_);
  }

  ParamT<T>& weight() { return weight_; }

 private:
  int in_, out_;
  bool has_bias_;
  ParamT<T> weight_, bias_;
  TensorT<T> x_;
};

// ---------------------------------------------------------------------------
// Pooling and resampling

template <typename T>
class AdaptiveAvgPool2d : public Layer<T> {
 public:
  AdaptiveAvgPool2d(int oh, int ow) : oh_(oh), ow_(ow) {}

  TensorT<T> forward(const TensorT<T>& x, bool) override {
    in_n_ = x.n();
    in_c_ = x.c();
    in_h_ = x.h();
    in_w_ = x.w();
    TensorT<T> out(x.n(), x.c(), oh_, ow_);
    for (int img = 0; img < x.n(); ++img) {
      for (int ch = 0; ch < x.c(); ++ch) {
        for (int oy = 0; oy < oh_; ++oy) {
          const int y0 = (oy * in_h_) / oh_;
          const int y1 = ((oy + 1) * in_h_ + oh_ - 1) / oh_;
          for (int ox = 0; ox < ow_; ++ox) {
            const int x0 = (ox * in_w_) / ow_;
            const int x1 = ((ox + 1) * in_w_ + ow_ - 1) / ow_;
            double acc = 0.0;
            for (int y = y0; y < y1; ++y) {
              for (int x2 = x0; x2 < x1; ++x2) acc += x.at(img, ch, y, x2);
            }
            out.at(img, ch, oy, ox) =
                static_cast<T>(acc / ((y1 - y0) * (x1 - x0)));
          }
        }
      }
    }
    return out;
  }

  TensorT<T> backward(const TensorT<T>& g) override {
    TensorT<T> dx(in_n_, in_c_, in_h_, in_w_);
    for (int img = 0; img < g.n(); ++img) {
      for (int ch = 0; ch < g.c(); ++ch) {
        for (int oy = 0; oy < oh_; ++oy) {
          const int y0 = (oy * in_h_) / oh_;
          const int y1 = ((oy + 1) * in_h_ + oh_ - 1) / oh_;
          for (int ox = 0; ox < ow_; ++ox) {
            const int x0 = (ox * in_w_) / ow_;
            const int x1 = ((ox + 1) * in_w_ + ow_ - 1) / ow_;
            const T share =
                g.at(img, ch, oy, ox) / static_cast<T>((y1 - y0) * (x1 - x0));
            for (int y = y0; y < y1; ++y) {
              for (int x2 = x0; x2 < x1; ++x2) {
                dx.at(img, ch, y, x2) += share;
              }
            }
          }
        }
      }
    }
    return dx;
  }

 private:
  int oh_, ow_;
  int in_n_ = 0, in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

// Bilinear resize without corner alignment: sample positions are the centers
// of the output cells mapped into input coordinates.
template <typename T>
class BilinearUpsample : public Layer<T> {
 public:
  BilinearUpsample(int oh, int ow) : oh_(oh), ow_(ow) {}

  TensorT<T> forward(const TensorT<T>& x, bool) override {
    in_n_ = x.n();
    in_c_ = x.c();
    in_h_ = x.h();
    in_w_ = x.w();
    TensorT<T> out(x.n(), x.c(), oh_, ow_);
    for (int oy = 0; oy < oh_; ++oy) {
      int y0, y1;
      double wy;
      src_coords(oy, in_h_, oh_, y0, y1, wy);
      for (int ox = 0; ox < ow_; ++ox) {
        int x0, x1;
        double wx;
        src_coords(ox, in_w_, ow_, x0, x1, wx);
        for (int img = 0; img < x.n(); ++img) {
          for (int ch = 0; ch < x.c(); ++ch) {
            const double v =
                (1 - wy) * ((1 - wx) * x.at(img, ch, y0, x0) +
                            wx * x.at(img, ch, y0, x1)) +
                wy * ((1 - wx) * x.at(img, ch, y1, x0) +
                      wx * x.at(img, ch, y1, x1));
            out.at(img, ch, oy, ox) = static_cast<T>(v);
          }
        }
      }
    }
    return out;
  }

  TensorT<T> backward(const TensorT<T>& g) override {
    TensorT<T> dx(in_n_, in_c_, in_h_, in_w_);
    for (int oy = 0; oy < oh_; ++oy) {
      int y0, y1;
      double wy;
      src_coords(oy, in_h_, oh_, y0, y1, wy);
      for (int ox = 0; ox < ow_; ++ox) {
        int x0, x1;
        double wx;
        src_coords(ox, in_w_, ow_, x0, x1, wx);
        for (int img = 0; img < g.n(); ++img) {
          for (int ch = 0; ch < g.c(); ++ch) {
            const T gv = g.at(img, ch, oy, ox);
            dx.at(img, ch, y0, x0) += static_cast<T>((1 - wy) * (1 - wx) * gv);
            dx.at(img, ch, y0, x1) += static_cast<T>((1 - wy) * wx * gv);
            dx.at(img, ch, y1, x0) += static_cast<T>(wy * (1 - wx) * gv);
            dx.at(img, ch, y1, x1) += static_cast<T>(wy * wx * gv);
          }
        }
      }
    }
    return dx;
  }

 private:
  static void src_coords(int o, int in, int out, int& i0, int& i1, double& w) {
    double src = (o + 0.5) * static_cast<double>(in) / out - 0.5;
    if (src < 0) src = 0;
    i0 = static_cast<int>(src);
    if (i0 > in - 1) i0 = in - 1;
    i1 = i0 + 1 < in ? i0 + 1 : in - 1;
    w = src - i0;
    if (w < 0) w = 0;
    if (w > 1) w = 1;
  }

  int oh_, ow_;
  int in_n_ = 0, in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

// ---------------------------------------------------------------------------
// Composition

template <typename T>
class Sequential : public Layer<T> {
 public:
  Sequential() = default;

  Sequential& add(std::unique_ptr<Layer<T>> layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  TensorT<T> forward(const TensorT<T>& x, bool train) override {
    TensorT<T> h = x;
    for (auto& l : layers_) h = l->forward(h, train);
    return h;
  }

  TensorT<T> backward(const TensorT<T>& g) override {
    TensorT<T> d = g;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) {
      d = (*it)->backward(d);
    }
    return d;
  }

  void collect_params(std::vector<ParamT<T>*>& out) override {
    for (auto& l : layers_) l->collect_params(out);
  }
  void collect_buffers(std::vector<TensorT<T>*>& out) override {
    for (auto& l : layers_) l->collect_buffers(out);
  }
  void init(Rng& rng) override {
    for (auto& l : layers_) l->init(rng);
  }

  size_t size() const { return layers_.size(); }
  Layer<T>& at(size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

// ---------------------------------------------------------------------------
// Residual building blocks

// 3x3 convolution + normalization + rectification; the network entry unit.
template <typename T>
class StemBlock : public Layer<T> {
 public:
  StemBlock(int cin, int cout)
      : conv_(cin, cout, 3, 1, 1, false), bn_(cout) {}

  TensorT<T> forward(const TensorT<T>& x, bool train) override {
    return relu_.forward(bn_.forward(conv_.forward(x, train), train), train);
  }
  TensorT<T> backward(const TensorT<T>& g) override {
    return conv_.backward(bn_.backward(relu_.backward(g)));
  }
  void collect_params(std::vector<ParamT<T>*>& out) override {
    conv_.collect_params(out);
    bn_.collect_params(out);
  }
  void collect_buffers(std::vector<TensorT<T>*>& out) override {
    bn_.collect_buffers(out);
  }
  void init(Rng& rng) override {
    conv_.init(rng);
    bn_.init(rng);
  }

 private:
  Conv2d<T> conv_;
  BatchNorm2d<T> bn_;
  ReLU<T> relu_;
};

// Two 3x3 convolutions with a skip connection. When the block changes
// resolution or width, the skip path carries a 1x1 projection. With both
// convolution outputs silenced the block reduces to the identity on
// non-negative inputs, which is what lets a deep stack start close to a
// shallow one.
template <typename T>
class ResidualBlock : public Layer<T> {
 public:
  ResidualBlock(int cin, int cout, int stride)
      : conv1_(cin, cout, 3, stride, 1, false), bn1_(cout),
        conv2_(cout, cout, 3, 1, 1, false), bn2_(cout),
        projects_(stride != 1 || cin != cout) {
    if (projects_) {
      proj_conv_ = std::make_unique<Conv2d<T>>(cin, cout, 1, stride, 0, false);
      proj_bn_ = std::make_unique<BatchNorm2d<T>>(cout);
    }
  }

  TensorT<T> forward(const TensorT<T>& x, bool train) override {
    TensorT<T> a = relu1_.forward(bn1_.forward(conv1_.forward(x, train), train), train);
    TensorT<T> b = bn2_.forward(conv2_.forward(a, train), train);
    TensorT<T> s = projects_
                       ? proj_bn_->forward(proj_conv_->forward(x, train), train)
                       : x;
    b.add_(s);
    return relu2_.forward(b, train);
  }

  TensorT<T> backward(const TensorT<T>& g) override {
    TensorT<T> gsum = relu2_.backward(g);
    TensorT<T> dmain =
        conv1_.backward(bn1_.backward(relu1_.backward(
            conv2_.backward(bn2_.backward(gsum)))));
    if (projects_) {
      dmain.add_(proj_conv_->backward(proj_bn_->backward(gsum)));
    } else {
      dmain.add_(gsum);
    }
    return dmain;
  }

  void collect_params(std::vector<ParamT<T>*>& out) override {
    conv1_.collect_params(out);
    bn1_.collect_params(out);
    conv2_.collect_params(out);
    bn2_.collect_params(out);
    if (projects_) {
      proj_conv_->collect_params(out);
      proj_bn_->collect_params(out);
    }
  }
  void collect_buffers(std::vector<TensorT<T>*>& out) override {
    bn1_.collect_buffers(out);
    bn2_.collect_buffers(out);
    if (projects_) proj_bn_->collect_buffers(out);
  }
  void init(Rng& rng) override {
    conv1_.init(rng);
    bn1_.init(rng);
    conv2_.init(rng);
    bn2_.init(rng);
    if (projects_) {
      proj_conv_->init(rng);
      proj_bn_->init(rng);
    }
  }

  Conv2d<T>& conv2() { return conv2_; }
  BatchNorm2d<T>& bn2() { return bn2_; }

 private:
  Conv2d<T> conv1_;
  BatchNorm2d<T> bn1_;
  ReLU<T> relu1_;
  Conv2d<T> conv2_;
  BatchNorm2d<T> bn2_;
  ReLU<T> relu2_;
  bool projects_;
  std::unique_ptr<Conv2d<T>> proj_conv_;
  std::unique_ptr<BatchNorm2d<T>> proj_bn_;
};

}  // namespace contsup
