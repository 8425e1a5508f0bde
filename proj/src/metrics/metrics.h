// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytic cost accounting and wall-clock measurement.
//
// Activation accounting convention: a layer retains the output map of each
// convolution, normalization, and activation for its backward pass; pooling
// and resize outputs are not counted. Parameters and optimizer state are
// counted once, network-wide. Peak training memory assumes module-serial
// training: only one module's activations (plus its auxiliary machinery)
// are alive at a time, on top of parameters and optimizer state. The
// end-to-end figure is the same accounting applied to the unpartitioned
// network with its single final head.
//
// Compute accounting counts convolution and linear multiply-accumulates;
// normalizations and activations are excluded.

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "backbone/backbone.h"
#include "backbone/partition.h"
#include "engine/engine.h"

namespace contsup {

struct MemoryAccount {
  int k = 0;
  int batch_size = 0;
  int bytes_per_element = 4;
  // Backbone activation bytes per module (partition conservation: these sum
  // to the unpartitioned network's activation total).
  std::vector<double> module_activation_bytes;
  // Auxiliary machinery activation bytes per module: head, adapters,
  // decoder.
  std::vector<double> module_aux_bytes;
  double param_bytes = 0.0;
  double optimizer_state_bytes = 0.0;
  double peak_training_bytes = 0.0;
  double e2e_training_bytes = 0.0;
};

MemoryAccount account_memory(const NetworkPlan& plan, int batch_size,
                             int bytes_per_element = 4);

struct OverheadReport {
  // Per-sample inference multiply-accumulates.
  int64_t backbone_macs = 0;  // units plus the final head
  int64_t aux_head_macs = 0;  // interior heads and decoders (training-time only)
  int64_t context_macs = 0;   // adapters
  double relative_context_overhead = 0.0;  // context / backbone
};

OverheadReport account_overhead(const NetworkPlan& plan);

struct WallTimeStats {
  double mean_ms = 0.0;
  double stddev_ms = 0.0;
  int reps = 0;
  std::string hardware;
};

// Runs fn once to warm up, then reps times under the clock.
WallTimeStats measure_wall_time(const std::function<void()>& fn, int reps = 5);

// Human-readable descriptor of the executing hardware.
std::string hardware_descriptor();

}  // namespace contsup
