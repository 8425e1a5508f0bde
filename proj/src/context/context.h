// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Context supply: routing earlier signals into later modules of a greedily
// trained partition. A module's context sources are the original input
// and/or stored augmented features from earlier module boundaries, each fed
// through a small trainable adapter whose output is added onto the module's
// incoming feature map.
//
// Mode tags:
//   R0      no context (baseline)
//   E       original input through an encoder adapter
//   Rn      the n most recent augmented features through aligner adapters
//   RnE     both of the above
//   MiR1E   R1E plus i evenly spaced interior augmented features
//
// The augmented feature with index j is the input that module j+1 received
// after context addition; index 0 is the original input. A recent-feature
// index that lands on 0 is served by the original input routed through an
// aligner adapter (distinct from the encoder path).

#pragma once

#include <memory>
#include <string>
#include <vector>

#include "backbone/backbone.h"
#include "backbone/partition.h"
#include "core/tensor.h"
#include "nn/layers.h"

namespace contsup {

enum class ContextMode {
  kNone,                  // R0
  kOrigin,                // E
  kRecent,                // Rn
  kRecentOrigin,          // RnE
  kInteriorRecentOrigin,  // MiR1E
};

struct ContextSpec {
  ContextMode mode = ContextMode::kNone;
  int n_recent = 0;    // n of Rn / RnE; 1 for MiR1E
  int n_interior = 0;  // i of MiR1E

  bool has_origin_encoder() const {
    return mode == ContextMode::kOrigin || mode == ContextMode::kRecentOrigin ||
           mode == ContextMode::kInteriorRecentOrigin;
  }
  bool has_recent() const {
    return mode == ContextMode::kRecent || mode == ContextMode::kRecentOrigin ||
           mode == ContextMode::kInteriorRecentOrigin;
  }
  bool operator==(const ContextSpec& o) const {
    return mode == o.mode && n_recent == o.n_recent &&
           n_interior == o.n_interior;
  }
};

// Parses a mode tag ("R0", "E", "R4E", "M2R1E"). Throws ConfigError on
// anything else. format_context_tag is its inverse.
ContextSpec parse_context_tag(const std::string& tag);
std::string format_context_tag(const ContextSpec& spec);

enum class SourceKind { kOriginInput, kAugmentedFeature };
enum class AdapterKind { kEncoder, kAligner };

struct ContextSource {
  SourceKind kind = SourceKind::kOriginInput;
  // Augmented-feature index j (0 = original input). For kOriginInput via the
  // encoder path this is 0 by convention.
  int index = 0;
  AdapterKind adapter = AdapterKind::kEncoder;

  bool operator==(const ContextSource& o) const {
    return kind == o.kind && index == o.index && adapter == o.adapter;
  }
};

struct ContextSources {
  int module_index = 0;  // 1-based
  std::vector<ContextSource> sources;
};

// Resolves which sources module `module_index` (1-based, <= k) consumes
// under a context spec. Module 1 never has sources. Sources are ordered:
// encoder path first, then aligner-path features by descending index.
ContextSources resolve_sources(const ContextSpec& spec, int module_index,
                               int k);

// Per-module resolution for a whole partition, honoring optional per-module
// mode overrides (element m, 0-based, overrides module m+1; empty string
// means no override).
std::vector<ContextSources> resolve_all_sources(
    const ContextSpec& spec, int k,
    const std::vector<std::string>& per_module_tags = {});

struct AdapterSpec {
  AdapterKind kind = AdapterKind::kEncoder;
  Shape source_shape;
  Shape target_shape;

  bool operator==(const AdapterSpec& o) const {
    return kind == o.kind && source_shape == o.source_shape &&
           target_shape == o.target_shape;
  }
};

// Learnable parameter count of an adapter: convolution weights (no biases)
// plus one affine pair per normalization.
int64_t adapter_param_count(const AdapterSpec& spec);

// Multiply-accumulates of one adapter application to a single sample.
int64_t adapter_mac_count(const AdapterSpec& spec);

// Activation elements an adapter retains for backward, per sample (outputs
// of each convolution, normalization, and rectification).
int64_t adapter_activation_elements(const AdapterSpec& spec);

// Builds the adapter spec for one source feeding module `module_index`.
AdapterSpec make_adapter_spec(const ContextSource& source,
                              const BackboneSpec& backbone,
                              const PartitionPlan& plan, int module_index);

// A trainable adapter instance. The encoder path is two 3x3 convolutions,
// the aligner path one 1x1 convolution, each followed by normalization and
// rectification, with an adaptive average pool onto the target shape. With
// zero_init_scale the final normalization scale starts at zero so the
// adapter initially contributes exactly nothing.
class ContextAdapter {
 public:
  ContextAdapter(const AdapterSpec& spec, bool zero_init_scale);

  Tensor forward(const Tensor& source_value, bool train);
  // Gradient with respect to the source value; parameter gradients
  // accumulate.
  Tensor backward(const Tensor& grad_out);

  void collect_params(std::vector<Param*>& out);
  void collect_buffers(std::vector<Tensor*>& out);
  void init(Rng& rng);

  const AdapterSpec& spec() const { return spec_; }

  // Mean connection strength for diagnostics: the L1 norm of each
  // convolution kernel divided by its fan (in_channels * out_channels),
  // averaged over the adapter's convolutions.
  double mean_normalized_l1() const;

 private:
  AdapterSpec spec_;
  Sequential<float> net_;
  std::vector<Conv2d<float>*> convs_;
};

// Adds adapter outputs onto a module's incoming feature map:
//   out = h_in + sum_k adapters[k]->forward(source_values[k])
// Shape mismatches raise InvariantViolation naming both shapes. backward()
// returns the gradients with respect to each source value; the gradient
// with respect to h_in is grad_out itself.
class ComposeOp {
 public:
  Tensor forward(const Tensor& h_in,
                 const std::vector<ContextAdapter*>& adapters,
                 const std::vector<const Tensor*>& source_values, bool train);
  std::vector<Tensor> backward(const Tensor& grad_out);

 private:
  std::vector<ContextAdapter*> adapters_;
};

}  // namespace contsup
