// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Stochastic gradient descent with Nesterov momentum and decoupled-from-loss
// L2 weight decay folded into the gradient:
//
//   g   = grad + wd * w
//   buf = mu * buf + g
//   w  -= lr * (g + mu * buf)
//
// The momentum buffer lives on the parameter so checkpoints can carry it.

#pragma once

#include <cmath>
#include <vector>

#include "core/errors.h"
#include "core/tensor.h"

namespace contsup {

template <typename T>
class SgdNesterov {
 public:
  SgdNesterov(std::vector<ParamT<T>*> params, double lr, double momentum,
              double weight_decay)
      : params_(std::move(params)), lr_(lr), momentum_(momentum),
        weight_decay_(weight_decay) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step() {
    for (auto* p : params_) {
      T* w = p->value.data();
      T* g = p->grad.data();
      T* buf = p->momentum.data();
      const int64_t count = p->value.numel();
      for (int64_t i = 0; i < count; ++i) {
        const double gi = static_cast<double>(g[i]) + weight_decay_ * w[i];
        const double b = momentum_ * buf[i] + gi;
        buf[i] = static_cast<T>(b);
        w[i] = static_cast<T>(w[i] - lr_ * (gi + momentum_ * b));
      }
    }
  }

  const std::vector<ParamT<T>*>& params() const { return params_; }

 private:
  std::vector<ParamT<T>*> params_;
  double lr_;
  double momentum_;
  double weight_decay_;
};

// Learning rate schedules, evaluated per epoch.
struct LrSchedule {
  enum class Kind { kCosine, kMultistep, kConstant };
  Kind kind = Kind::kCosine;
  double base_lr = 0.1;
  int total_epochs = 1;
  std::vector<int> milestones;  // multistep only
  double gamma = 0.1;           // multistep only

  double at(int epoch) const {
    switch (kind) {
      case Kind::kCosine: {
        if (total_epochs <= 0) return base_lr;
        const double t = static_cast<double>(epoch) / total_epochs;
        return 0.5 * base_lr *
               (1.0 + std::cos(3.14159265358979323846 * t));
      }
      case Kind::kMultistep: {
        double lr = base_lr;
        for (int m : milestones) {
          if (epoch >= m) lr *= gamma;
        }
        return lr;
      }
      case Kind::kConstant:
        return base_lr;
    }
    return base_lr;
  }
};

}  // namespace contsup
