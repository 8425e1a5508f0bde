// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Variational information probe. The mutual information between a feature
// map h and the label y is estimated as
//
//   I(h, y)  >=  H(y) - min over probes of E[-log q(y | h)]
//
// by training a small convolutional classifier q on a train split of the
// features and scoring its negative log-likelihood on a held-out split.
// H(y) is the entropy of the held-out empirical label distribution, so by
// Gibbs' inequality the raw estimate can never exceed the mutual
// information of the empirical held-out joint; it is a lower bound that
// tightens as the probe improves. The best NLL seen across evaluations is
// used, which is the trajectory analogue of the maximization over probes.
//
// The split is contiguous (leading fraction trains, trailing fraction
// evaluates); callers that need an exactly stratified evaluation split
// order their samples accordingly.

#pragma once

#include <cstdint>
#include <vector>

#include "core/tensor.h"
#include "engine/engine.h"

namespace contsup {

struct ProbeConfig {
  int width = 32;          // channels after alignment
  int epochs = 60;
  int batch_size = 128;
  double lr = 0.05;
  double momentum = 0.9;
  double weight_decay = 0.0;
  int patience = 5;        // evaluations without improvement before stopping
  double eval_fraction = 0.2;
  int min_spatial = 8;     // features below this resolution are upsampled
  uint64_t seed = 0;
};

struct InfoEstimate {
  int module_index = 0;
  double estimate_nats = 0.0;      // max(0, raw_estimate_nats)
  double raw_estimate_nats = 0.0;  // H(y) - heldout NLL, possibly negative
  double label_entropy_nats = 0.0;
  double heldout_nll_nats = 0.0;
  int64_t train_samples = 0;
  int64_t eval_samples = 0;
  int num_classes = 0;
};

// Estimates I(features, labels) in nats. Features are (n, c, h, w); labels
// in [0, num_classes).
InfoEstimate estimate_mi(const Tensor& features, const std::vector<int>& labels,
                         int num_classes, const ProbeConfig& config);

// Per-module information curve: runs the network in inference mode over the
// provided samples (optionally capped, taken from the front), collects each
// module's output features, and probes them. Point l (1-based) estimates
// I(h_l, y).
std::vector<InfoEstimate> info_curve(Network& net, const Tensor& x,
                                     const std::vector<int>& labels,
                                     const ProbeConfig& config,
                                     int max_samples = 0);

}  // namespace contsup
