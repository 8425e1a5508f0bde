// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Loss functions. Each returns the scalar loss (reduced in double precision)
// and the gradient with respect to its first argument. Losses are in nats.

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "core/errors.h"
#include "core/tensor.h"

namespace contsup {

template <typename T>
struct LossResult {
  double loss = 0.0;
  TensorT<T> grad;
};

// Mean softmax cross-entropy over the batch. Logits are (n, classes).
template <typename T>
LossResult<T> cross_entropy(const TensorT<T>& logits,
                            const std::vector<int>& labels) {
  const int n = logits.n();
  const int classes = static_cast<int>(logits.features());
  if (classes < 2) {
    throw InvariantViolation("cross_entropy: needs at least 2 classes");
  }
  if (static_cast<int>(labels.size()) != n) {
    throw InvariantViolation("cross_entropy: batch/label count mismatch");
  }
  LossResult<T> res;
  res.grad = TensorT<T>(logits.n(), logits.c(), logits.h(), logits.w());
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int y = labels[i];
    if (y < 0 || y >= classes) {
      throw InvariantViolation("cross_entropy: label " + std::to_string(y) +
                               " out of range for " + std::to_string(classes) +
                               " classes");
    }
    const T* z = logits.data() + static_cast<size_t>(i) * classes;
    double zmax = z[0];
    for (int k = 1; k < classes; ++k) zmax = std::max(zmax, double(z[k]));
    double denom = 0.0;
    for (int k = 0; k < classes; ++k) denom += std::exp(z[k] - zmax);
    const double lse = zmax + std::log(denom);
    total += lse - z[y];
    T* gp = res.grad.data() + static_cast<size_t>(i) * classes;
    for (int k = 0; k < classes; ++k) {
      const double p = std::exp(z[k] - lse);
      gp[k] = static_cast<T>((p - (k == y ? 1.0 : 0.0)) / n);
    }
  }
  res.loss = total / n;
  return res;
}

// Supervised contrastive loss over a batch of embeddings (n, d). Embeddings
// are L2-normalized internally; similarities are scaled by 1/temperature.
// The loss averages, over all ordered pairs (i, j) with matching labels and
// i != j, the negative log-probability of j among all candidates k != i.
// Batches with no positive pair have zero loss and gradient; the flag in the
// result reports that situation.
template <typename T>
struct ContrastiveResult {
  double loss = 0.0;
  TensorT<T> grad;
  bool had_positive_pair = false;
};

template <typename T>
ContrastiveResult<T> supervised_contrastive(const TensorT<T>& emb,
                                            const std::vector<int>& labels,
                                            double temperature) {
  const int n = emb.n();
  const int d = static_cast<int>(emb.features());
  if (temperature <= 0) {
    throw InvariantViolation("supervised_contrastive: temperature must be > 0");
  }
  if (static_cast<int>(labels.size()) != n) {
    throw InvariantViolation(
        "supervised_contrastive: batch/label count mismatch");
  }
  ContrastiveResult<T> res;
  res.grad = TensorT<T>(emb.n(), emb.c(), emb.h(), emb.w());
  if (n < 2) return res;

  // Normalized embeddings and row norms.
  std::vector<double> norm(n);
  std::vector<double> e(static_cast<size_t>(n) * d);
  const double eps = 1e-12;
  for (int i = 0; i < n; ++i) {
    const T* p = emb.data() + static_cast<size_t>(i) * d;
    double s = 0.0;
    for (int k = 0; k < d; ++k) s += static_cast<double>(p[k]) * p[k];
    norm[i] = std::sqrt(s) + eps;
    for (int k = 0; k < d; ++k) e[static_cast<size_t>(i) * d + k] = p[k] / norm[i];
  }

  // Similarity matrix s_ij = <e_i, e_j> / tau.
  std::vector<double> sim(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      double dot = 0.0;
      for (int k = 0; k < d; ++k) {
        dot += e[static_cast<size_t>(i) * d + k] * e[static_cast<size_t>(j) * d + k];
      }
      sim[static_cast<size_t>(i) * n + j] = dot / temperature;
    }
  }

  // Per anchor: log-sum-exp over k != i and positive count.
  std::vector<double> lse(n);
  std::vector<int> pos_count(n, 0);
  int64_t total_pairs = 0;
  for (int i = 0; i < n; ++i) {
    double m = -std::numeric_limits<double>::infinity();
    for (int k = 0; k < n; ++k) {
      if (k != i) m = std::max(m, sim[static_cast<size_t>(i) * n + k]);
    }
    double denom = 0.0;
    for (int k = 0; k < n; ++k) {
      if (k != i) denom += std::exp(sim[static_cast<size_t>(i) * n + k] - m);
    }
    lse[i] = m + std::log(denom);
    for (int j = 0; j < n; ++j) {
      if (j != i && labels[j] == labels[i]) ++pos_count[i];
    }
    total_pairs += pos_count[i];
  }
  if (total_pairs == 0) return res;
  res.had_positive_pair = true;

  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (j != i && labels[j] == labels[i]) {
        total += lse[i] - sim[static_cast<size_t>(i) * n + j];
      }
    }
  }
  res.loss = total / total_pairs;

  // dL/ds_ik = (n_i * p_ik - [k positive for i]) / P for k != i, where p_ik
  // is the softmax of row i excluding the diagonal.
  std::vector<double> gs(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) {
    if (pos_count[i] == 0 && total_pairs > 0) {
      // Anchor contributes no terms; its row gradient stays zero.
    }
    for (int k = 0; k < n; ++k) {
      if (k == i) continue;
      const double p_ik = std::exp(sim[static_cast<size_t>(i) * n + k] - lse[i]);
      const bool positive = labels[k] == labels[i];
      gs[static_cast<size_t>(i) * n + k] =
          (pos_count[i] * p_ik - (positive ? 1.0 : 0.0)) / total_pairs;
    }
  }

  // Back through s = E E^T / tau, then through row normalization.
  for (int i = 0; i < n; ++i) {
    std::vector<double> de(d, 0.0);
    for (int k = 0; k < n; ++k) {
      const double w =
          (gs[static_cast<size_t>(i) * n + k] + gs[static_cast<size_t>(k) * n + i]) /
          temperature;
      if (w == 0.0) continue;
      for (int t = 0; t < d; ++t) {
        de[t] += w * e[static_cast<size_t>(k) * d + t];
      }
    }
    // Project out the radial component and rescale.
    double dot = 0.0;
    for (int t = 0; t < d; ++t) dot += de[t] * e[static_cast<size_t>(i) * d + t];
    T* gp = res.grad.data() + static_cast<size_t>(i) * d;
    for (int t = 0; t < d; ++t) {
      gp[t] = static_cast<T>(
          (de[t] - dot * e[static_cast<size_t>(i) * d + t]) / norm[i]);
    }
  }
  return res;
}

// Mean squared error over all elements.
template <typename T>
LossResult<T> mean_squared_error(const TensorT<T>& pred,
                                 const TensorT<T>& target) {
  if (!pred.same_shape(target)) {
    throw InvariantViolation("mean_squared_error: shape mismatch " +
                             pred.shape_str() + " vs " + target.shape_str());
  }
  LossResult<T> res;
  res.grad = TensorT<T>(pred.n(), pred.c(), pred.h(), pred.w());
  const int64_t count = pred.numel();
  double total = 0.0;
  for (int64_t i = 0; i < count; ++i) {
    const double diff = static_cast<double>(pred[i]) - target[i];
    total += diff * diff;
    res.grad[i] = static_cast<T>(2.0 * diff / count);
  }
  res.loss = total / count;
  return res;
}

}  // namespace contsup
