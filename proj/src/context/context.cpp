// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0

#include "context/context.h"

#include <algorithm>
#include <set>

#include "core/errors.h"

namespace contsup {

namespace {

bool consume_prefix(std::string& s, char c) {
  if (!s.empty() && s[0] == c) {
    s.erase(0, 1);
    return true;
  }
  return false;
}

// Parses a non-negative integer prefix; returns -1 if none.
int consume_int(std::string& s) {
  size_t i = 0;
  while (i < s.size() && s[i] >= '0' && s[i] <= '9') ++i;
  if (i == 0) return -1;
  const int v = std::stoi(s.substr(0, i));
  s.erase(0, i);
  return v;
}

}  // namespace

ContextSpec parse_context_tag(const std::string& tag) {
  std::string rest = tag;
  ContextSpec spec;

  int interior = -1;
  if (consume_prefix(rest, 'M')) {
    interior = consume_int(rest);
    if (interior < 1) {
      throw ConfigError("context tag '" + tag +
                        "': M must be followed by a positive count");
    }
  }
  int recent = -1;
  if (consume_prefix(rest, 'R')) {
    recent = consume_int(rest);
    if (recent < 0) {
      throw ConfigError("context tag '" + tag +
                        "': R must be followed by a count");
    }
  }
  const bool origin = consume_prefix(rest, 'E');
  if (!rest.empty()) {
    throw ConfigError("context tag '" + tag + "': trailing characters '" +
                      rest + "'");
  }

  if (interior >= 1) {
    // Interior points are defined only on top of R1E.
    if (recent != 1 || !origin) {
      throw ConfigError("context tag '" + tag +
                        "': M<i> requires the exact form M<i>R1E");
    }
    spec.mode = ContextMode::kInteriorRecentOrigin;
    spec.n_recent = 1;
    spec.n_interior = interior;
    return spec;
  }
  if (recent == 0) {
    if (origin) {
      throw ConfigError("context tag '" + tag +
                        "': R0 does not combine with E");
    }
    spec.mode = ContextMode::kNone;
    return spec;
  }
  if (recent > 0 && origin) {
    spec.mode = ContextMode::kRecentOrigin;
    spec.n_recent = recent;
    return spec;
  }
  if (recent > 0) {
    spec.mode = ContextMode::kRecent;
    spec.n_recent = recent;
    return spec;
  }
  if (origin) {
    spec.mode = ContextMode::kOrigin;
    return spec;
  }
  throw ConfigError("context tag '" + tag + "': empty or unrecognized");
}

std::string format_context_tag(const ContextSpec& spec) {
  switch (spec.mode) {
    case ContextMode::kNone:
      return "R0";
    case ContextMode::kOrigin:
      return "E";
    case ContextMode::kRecent:
      return "R" + std::to_string(spec.n_recent);
    case ContextMode::kRecentOrigin:
      return "R" + std::to_string(spec.n_recent) + "E";
    case ContextMode::kInteriorRecentOrigin:
      return "M" + std::to_string(spec.n_interior) + "R1E";
  }
  throw InvariantViolation("format_context_tag: unknown mode");
}

ContextSources resolve_sources(const ContextSpec& spec, int module_index,
                               int k) {
  if (module_index < 1 || module_index > k) {
    throw InvariantViolation("resolve_sources: module " +
                             std::to_string(module_index) +
                             " out of range for k=" + std::to_string(k));
  }
  ContextSources out;
  out.module_index = module_index;
  const int l = module_index;
  if (l == 1 || spec.mode == ContextMode::kNone) return out;

  if (spec.has_origin_encoder()) {
    out.sources.push_back(
        {SourceKind::kOriginInput, 0, AdapterKind::kEncoder});
  }

  // Aligner-path feature indices, collected as a set then emitted deepest
  // first. Index 0 denotes the original input on the aligner path.
  std::set<int> indices;
  if (spec.has_recent()) {
    for (int i = 1; i <= spec.n_recent; ++i) {
      const int j = l - 1 - i;
      if (j >= 0) indices.insert(j);
    }
  }
  if (spec.mode == ContextMode::kInteriorRecentOrigin && l - 2 >= 1) {
    // i interior points at depths t*(l-2)/(i+1), rounded to the nearest
    // valid index with ties toward the shallower one.
    const int den = spec.n_interior + 1;
    for (int t = 1; t <= spec.n_interior; ++t) {
      const int num = t * (l - 2);
      int j = num / den;
      const int rem = num % den;
      if (2 * rem > den) ++j;  // exact half rounds down (shallower)
      j = std::clamp(j, 1, l - 2);
      indices.insert(j);
    }
  }
  for (auto it = indices.rbegin(); it != indices.rend(); ++it) {
    const int j = *it;
    if (j == 0) {
      out.sources.push_back(
          {SourceKind::kOriginInput, 0, AdapterKind::kAligner});
    } else {
      out.sources.push_back(
          {SourceKind::kAugmentedFeature, j, AdapterKind::kAligner});
    }
  }
  return out;
}

std::vector<ContextSources> resolve_all_sources(
    const ContextSpec& spec, int k,
    const std::vector<std::string>& per_module_tags) {
  if (!per_module_tags.empty() &&
      static_cast<int>(per_module_tags.size()) != k) {
    throw ConfigError("per-module context overrides must list all " +
                      std::to_string(k) + " modules");
  }
  std::vector<ContextSources> all;
  all.reserve(k);
  for (int l = 1; l <= k; ++l) {
    ContextSpec effective = spec;
    if (!per_module_tags.empty() && !per_module_tags[l - 1].empty()) {
      effective = parse_context_tag(per_module_tags[l - 1]);
    }
    all.push_back(resolve_sources(effective, l, k));
  }
  return all;
}

int64_t adapter_param_count(const AdapterSpec& spec) {
  const int64_t cs = spec.source_shape.c;
  const int64_t ct = spec.target_shape.c;
  if (spec.kind == AdapterKind::kEncoder) {
    return (cs * ct * 9 + 2 * ct) + (ct * ct * 9 + 2 * ct);
  }
  return cs * ct + 2 * ct;
}

int64_t adapter_mac_count(const AdapterSpec& spec) {
  const int64_t cs = spec.source_shape.c;
  const int64_t ct = spec.target_shape.c;
  const int64_t hw =
      static_cast<int64_t>(spec.source_shape.h) * spec.source_shape.w;
  if (spec.kind == AdapterKind::kEncoder) {
    return cs * ct * 9 * hw + ct * ct * 9 * hw;
  }
  return cs * ct * hw;
}

int64_t adapter_activation_elements(const AdapterSpec& spec) {
  const int64_t ct = spec.target_shape.c;
  const int64_t hw =
      static_cast<int64_t>(spec.source_shape.h) * spec.source_shape.w;
  // conv/norm/relu trios run at the source resolution.
  const int trios = spec.kind == AdapterKind::kEncoder ? 2 : 1;
  return 3 * trios * ct * hw;
}

AdapterSpec make_adapter_spec(const ContextSource& source,
                              const BackboneSpec& backbone,
                              const PartitionPlan& plan, int module_index) {
  if (module_index < 2 || module_index > plan.k()) {
    throw InvariantViolation(
        "make_adapter_spec: module index out of range: " +
        std::to_string(module_index));
  }
  AdapterSpec spec;
  spec.kind = source.adapter == AdapterKind::kEncoder ? AdapterKind::kEncoder
                                                      : AdapterKind::kAligner;
  spec.target_shape =
      backbone.shape_before(plan.modules[module_index - 1].begin);
  if (source.kind == SourceKind::kOriginInput) {
    spec.source_shape = backbone.config.input;
  } else {
    // Augmented feature j has the shape of module j+1's input boundary.
    if (source.index < 1 || source.index >= plan.k()) {
      throw InvariantViolation("make_adapter_spec: bad feature index " +
                               std::to_string(source.index));
    }
    spec.source_shape = backbone.shape_before(plan.modules[source.index].begin);
  }
  return spec;
}

ContextAdapter::ContextAdapter(const AdapterSpec& spec, bool zero_init_scale)
    : spec_(spec) {
  const int cs = spec.source_shape.c;
  const int ct = spec.target_shape.c;
  const double final_scale = zero_init_scale ? 0.0 : 1.0;
  if (spec.kind == AdapterKind::kEncoder) {
    convs_.push_back(&net_.emplace<Conv2d<float>>(cs, ct, 3, 1, 1, false));
    net_.emplace<BatchNorm2d<float>>(ct);
    net_.emplace<ReLU<float>>();
    convs_.push_back(&net_.emplace<Conv2d<float>>(ct, ct, 3, 1, 1, false));
    net_.emplace<BatchNorm2d<float>>(ct, final_scale);
    net_.emplace<ReLU<float>>();
  } else {
    convs_.push_back(&net_.emplace<Conv2d<float>>(cs, ct, 1, 1, 0, false));
    net_.emplace<BatchNorm2d<float>>(ct, final_scale);
    net_.emplace<ReLU<float>>();
  }
  net_.emplace<AdaptiveAvgPool2d<float>>(spec.target_shape.h,
                                         spec.target_shape.w);
}

Tensor ContextAdapter::forward(const Tensor& source_value, bool train) {
  if (source_value.shape() != spec_.source_shape) {
    throw InvariantViolation("adapter: source shape " +
                             source_value.shape().str() + " does not match " +
                             spec_.source_shape.str());
  }
  return net_.forward(source_value, train);
}

Tensor ContextAdapter::backward(const Tensor& grad_out) {
  return net_.backward(grad_out);
}

void ContextAdapter::collect_params(std::vector<Param*>& out) {
  net_.collect_params(out);
}
void ContextAdapter::collect_buffers(std::vector<Tensor*>& out) {
  net_.collect_buffers(out);
}
void ContextAdapter::init(Rng& rng) { net_.init(rng); }

double ContextAdapter::mean_normalized_l1() const {
  double total = 0.0;
  for (const auto* conv : convs_) {
    double l1 = 0.0;
    for (float w : conv->weight().value.vec()) l1 += std::abs(w);
    total += l1 / (static_cast<double>(conv->in_channels()) *
                   conv->out_channels());
  }
  return convs_.empty() ? 0.0 : total / convs_.size();
}

Tensor ComposeOp::forward(const Tensor& h_in,
                          const std::vector<ContextAdapter*>& adapters,
                          const std::vector<const Tensor*>& source_values,
                          bool train) {
  if (adapters.size() != source_values.size()) {
    throw InvariantViolation("compose: adapter/source count mismatch");
  }
  adapters_ = adapters;
  Tensor out = h_in;
  for (size_t i = 0; i < adapters.size(); ++i) {
    Tensor addend = adapters[i]->forward(*source_values[i], train);
    if (!addend.same_shape(out)) {
      throw InvariantViolation(
          "compose: adapter output " + addend.shape_str() +
          " does not match the module input " + out.shape_str());
    }
    out.add_(addend);
  }
  return out;
}

std::vector<Tensor> ComposeOp::backward(const Tensor& grad_out) {
  std::vector<Tensor> source_grads;
  source_grads.reserve(adapters_.size());
  for (auto* adapter : adapters_) {
    source_grads.push_back(adapter->backward(grad_out));
  }
  return source_grads;
}

}  // namespace contsup
