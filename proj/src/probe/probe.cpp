// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0

#include "probe/probe.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include "core/errors.h"
#include "core/rng.h"
#include "nn/layers.h"
#include "nn/losses.h"
#include "nn/optim.h"

namespace contsup {

namespace {

// Three convolutional stages: 1x1 channel alignment (preceded by bilinear
// upsampling when the feature map is smaller than min_spatial), a strided
// 3x3 stage doubling the width, and a 3x3 stage at constant width; then
// global pooling and a linear readout.
Sequential<float> build_probe(Shape in, int width, int min_spatial,
                              int num_classes) {
  Sequential<float> net;
  if (in.h < min_spatial || in.w < min_spatial) {
    net.emplace<BilinearUpsample<float>>(std::max(in.h, min_spatial),
                                         std::max(in.w, min_spatial));
  }
  net.emplace<Conv2d<float>>(in.c, width, 1, 1, 0, false);
  net.emplace<BatchNorm2d<float>>(width);
  net.emplace<ReLU<float>>();
  net.emplace<Conv2d<float>>(width, 2 * width, 3, 2, 1, false);
  net.emplace<BatchNorm2d<float>>(2 * width);
  net.emplace<ReLU<float>>();
  net.emplace<Conv2d<float>>(2 * width, 2 * width, 3, 1, 1, false);
  net.emplace<BatchNorm2d<float>>(2 * width);
  net.emplace<ReLU<float>>();
  net.emplace<AdaptiveAvgPool2d<float>>(1, 1);
  net.emplace<Linear<float>>(2 * width, num_classes);
  return net;
}

Tensor slice_rows(const Tensor& src, const std::vector<int>& rows) {
  Tensor out(static_cast<int>(rows.size()), src.c(), src.h(), src.w());
  const int64_t f = src.features();
  for (size_t i = 0; i < rows.size(); ++i) {
    const float* from = src.data() + static_cast<size_t>(rows[i]) * f;
    std::copy(from, from + f, out.data() + static_cast<size_t>(i) * f);
  }
  return out;
}

// Mean NLL of the probe on a sample range, computed in inference mode.
double heldout_nll(Sequential<float>& probe, const Tensor& x,
                   const std::vector<int>& y, int chunk) {
  double total = 0.0;
  int64_t seen = 0;
  for (int start = 0; start < x.n(); start += chunk) {
    const int count = std::min(chunk, x.n() - start);
    std::vector<int> rows(count);
    for (int i = 0; i < count; ++i) rows[i] = start + i;
    Tensor logits = probe.forward(slice_rows(x, rows), false);
    std::vector<int> labels(y.begin() + start, y.begin() + start + count);
    total += cross_entropy(logits, labels).loss * count;
    seen += count;
  }
  return total / seen;
}

}  // namespace

InfoEstimate estimate_mi(const Tensor& features, const std::vector<int>& labels,
                         int num_classes, const ProbeConfig& config) {
  const int n = features.n();
  if (n != static_cast<int>(labels.size())) {
    throw InvariantViolation("estimate_mi: feature/label count mismatch");
  }
  if (num_classes < 2) {
    throw InvariantViolation("estimate_mi: needs at least 2 classes");
  }
  const int n_eval = std::max(1, static_cast<int>(
                                     std::lround(n * config.eval_fraction)));
  const int n_train = n - n_eval;
  if (n_train < 1) {
    throw InvariantViolation("estimate_mi: not enough samples to split");
  }

  std::vector<int> train_rows(n_train), eval_rows(n_eval);
  for (int i = 0; i < n_train; ++i) train_rows[i] = i;
  for (int i = 0; i < n_eval; ++i) eval_rows[i] = n_train + i;
  Tensor x_train = slice_rows(features, train_rows);
  Tensor x_eval = slice_rows(features, eval_rows);
  std::vector<int> y_train(labels.begin(), labels.begin() + n_train);
  std::vector<int> y_eval(labels.begin() + n_train, labels.end());

  // Entropy of the held-out empirical label distribution.
  std::vector<int64_t> counts(num_classes, 0);
  for (int y : y_eval) {
    if (y < 0 || y >= num_classes) {
      throw InvariantViolation("estimate_mi: label out of range");
    }
    ++counts[y];
  }
  double h_y = 0.0;
  for (int64_t c : counts) {
    if (c > 0) {
      const double p = static_cast<double>(c) / n_eval;
      h_y -= p * std::log(p);
    }
  }

  Sequential<float> probe = build_probe(features.shape(), config.width,
                                        config.min_spatial, num_classes);
  Rng init_rng = Rng::derive(config.seed, "probe/init");
  probe.init(init_rng);
  std::vector<Param*> params;
  probe.collect_params(params);
  SgdNesterov<float> opt(params, config.lr, config.momentum,
                         config.weight_decay);
  LrSchedule schedule{LrSchedule::Kind::kCosine, config.lr, config.epochs, {},
                      0.1};

  Rng shuffle_rng = Rng::derive(config.seed, "probe/shuffle");
  double best_nll = heldout_nll(probe, x_eval, y_eval, config.batch_size);
  int stale = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    opt.set_lr(schedule.at(epoch));
    std::vector<int> order = shuffle_rng.permutation(n_train);
    for (int start = 0; start < n_train; start += config.batch_size) {
      const int count = std::min(config.batch_size, n_train - start);
      if (count < 2) break;  // a 1-sample batch breaks batch normalization
      std::vector<int> rows(order.begin() + start,
                            order.begin() + start + count);
      Tensor xb = slice_rows(x_train, rows);
      std::vector<int> yb(count);
      for (int i = 0; i < count; ++i) yb[i] = y_train[rows[i]];
      opt.zero_grad();
      Tensor logits = probe.forward(xb, true);
      LossResult<float> ce = cross_entropy(logits, yb);
      if (!std::isfinite(ce.loss)) {
        throw NumericError("probe: non-finite loss");
      }
      probe.backward(ce.grad);
      opt.step();
    }
    const double nll = heldout_nll(probe, x_eval, y_eval, config.batch_size);
    if (nll < best_nll - 1e-6) {
      best_nll = nll;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }

  InfoEstimate est;
  est.label_entropy_nats = h_y;
  est.heldout_nll_nats = best_nll;
  est.raw_estimate_nats = h_y - best_nll;
  est.estimate_nats = std::max(0.0, est.raw_estimate_nats);
  est.train_samples = n_train;
  est.eval_samples = n_eval;
  est.num_classes = num_classes;
  return est;
}

std::vector<InfoEstimate> info_curve(Network& net, const Tensor& x,
                                     const std::vector<int>& labels,
                                     const ProbeConfig& config,
                                     int max_samples) {
  int n = x.n();
  if (max_samples > 0 && max_samples < n) n = max_samples;
  std::vector<int> y(labels.begin(), labels.begin() + n);

  // Collect module outputs in chunks to bound the working set.
  const int k = net.k();
  std::vector<Tensor> collected(k);
  const int chunk = 256;
  int64_t written = 0;
  for (int start = 0; start < n; start += chunk) {
    const int count = std::min(chunk, n - start);
    Tensor xb(count, x.c(), x.h(), x.w());
    std::copy(x.data() + static_cast<size_t>(start) * x.features(),
              x.data() + static_cast<size_t>(start + count) * x.features(),
              xb.data());
    std::vector<Tensor> outputs;
    forward_all(net, xb, false, nullptr, &outputs);
    for (int l = 0; l < k; ++l) {
      if (collected[l].empty()) {
        collected[l] = Tensor(n, outputs[l].c(), outputs[l].h(), outputs[l].w());
      }
      std::copy(outputs[l].data(), outputs[l].data() + outputs[l].numel(),
                collected[l].data() + written * outputs[l].features());
    }
    written += count;
  }

  std::vector<InfoEstimate> curve;
  curve.reserve(k);
  for (int l = 1; l <= k; ++l) {
    InfoEstimate est =
        estimate_mi(collected[l - 1], y, net.num_classes(), config);
    est.module_index = l;
    curve.push_back(est);
    collected[l - 1] = Tensor();  // release
  }
  return curve;
}

}  // namespace contsup
