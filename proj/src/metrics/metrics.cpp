// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0

#include "metrics/metrics.h"

#include <sys/utsname.h>

#include <chrono>
#include <cmath>
#include <thread>

#include "core/errors.h"
#include "heads/heads.h"

namespace contsup {

namespace {

// Instantiates the head a module would get, to reuse the single source of
// truth for its shape-dependent structure.
int64_t head_activation_elements(const NetworkPlan& plan, int l) {
  const Shape out = plan.backbone.shape_before(plan.partition.modules[l - 1].end);
  const int classes = plan.backbone.config.num_classes;
  if (l == plan.partition.k()) {
    return FinalHead(out, classes).activation_elements();
  }
  return AuxHead(out, plan.backbone.config.input.h, classes,
                 plan.modules[l - 1].head_kind)
      .activation_elements();
}

int64_t head_param_count(const NetworkPlan& plan, int l) {
  const Shape out = plan.backbone.shape_before(plan.partition.modules[l - 1].end);
  const int classes = plan.backbone.config.num_classes;
  if (l == plan.partition.k()) {
    return FinalHead(out, classes).param_count();
  }
  return AuxHead(out, plan.backbone.config.input.h, classes,
                 plan.modules[l - 1].head_kind)
      .param_count();
}

int64_t head_mac_count(const NetworkPlan& plan, int l) {
  const Shape out = plan.backbone.shape_before(plan.partition.modules[l - 1].end);
  const int classes = plan.backbone.config.num_classes;
  if (l == plan.partition.k()) {
    return FinalHead(out, classes).mac_count();
  }
  return AuxHead(out, plan.backbone.config.input.h, classes,
                 plan.modules[l - 1].head_kind)
      .mac_count();
}

}  // namespace

MemoryAccount account_memory(const NetworkPlan& plan, int batch_size,
                             int bytes_per_element) {
  if (batch_size < 1) {
    throw ConfigError("account_memory: batch size must be positive");
  }
  const int k = plan.partition.k();
  MemoryAccount acc;
  acc.k = k;
  acc.batch_size = batch_size;
  acc.bytes_per_element = bytes_per_element;
  const double scale = static_cast<double>(batch_size) * bytes_per_element;

  int64_t backbone_params = 0;
  for (const auto& unit : plan.backbone.units) {
    backbone_params += unit_param_count(unit);
  }

  int64_t all_params = backbone_params;
  for (int l = 1; l <= k; ++l) {
    const ModuleRange range = plan.partition.modules[l - 1];
    int64_t seg_elems = 0;
    for (int u = range.begin; u < range.end; ++u) {
      seg_elems += unit_activation_elements(plan.backbone.units[u]);
    }
    acc.module_activation_bytes.push_back(seg_elems * scale);

    int64_t aux_elems = head_activation_elements(plan, l);
    all_params += head_param_count(plan, l);
    for (const auto& src : plan.modules[l - 1].sources.sources) {
      const AdapterSpec aspec =
          make_adapter_spec(src, plan.backbone, plan.partition, l);
      aux_elems += adapter_activation_elements(aspec);
      all_params += adapter_param_count(aspec);
    }
    if (l < k && plan.modules[l - 1].decoder_on) {
      const Shape out = plan.backbone.shape_before(range.end);
      AuxDecoder dec(out, plan.backbone.config.input);
      aux_elems += dec.activation_elements();
      all_params += dec.param_count();
    }
    acc.module_aux_bytes.push_back(aux_elems * scale);
  }

  acc.param_bytes = static_cast<double>(all_params) * bytes_per_element;
  acc.optimizer_state_bytes = acc.param_bytes;

  double peak_acts = 0.0;
  double total_backbone_acts = 0.0;
  for (int l = 0; l < k; ++l) {
    total_backbone_acts += acc.module_activation_bytes[l];
    const double alive = acc.module_activation_bytes[l] + acc.module_aux_bytes[l];
    if (alive > peak_acts) peak_acts = alive;
  }
  acc.peak_training_bytes =
      peak_acts + acc.param_bytes + acc.optimizer_state_bytes;

  // Unpartitioned reference: every activation alive at once, one final head,
  // no adapters or auxiliary heads.
  const Shape final_shape = plan.backbone.output_shape();
  const FinalHead e2e_head(final_shape, plan.backbone.config.num_classes);
  const double e2e_params = static_cast<double>(
      (backbone_params + e2e_head.param_count())) * bytes_per_element;
  acc.e2e_training_bytes = total_backbone_acts +
                           e2e_head.activation_elements() * scale +
                           2.0 * e2e_params;
  return acc;
}

OverheadReport account_overhead(const NetworkPlan& plan) {
  const int k = plan.partition.k();
  OverheadReport rep;
  for (const auto& unit : plan.backbone.units) {
    rep.backbone_macs += unit_mac_count(unit);
  }
  rep.backbone_macs += head_mac_count(plan, k);  // final head
  for (int l = 1; l <= k; ++l) {
    if (l < k) {
      rep.aux_head_macs += head_mac_count(plan, l);
      if (plan.modules[l - 1].decoder_on) {
        const Shape out =
            plan.backbone.shape_before(plan.partition.modules[l - 1].end);
        rep.aux_head_macs +=
            AuxDecoder(out, plan.backbone.config.input).mac_count();
      }
    }
    for (const auto& src : plan.modules[l - 1].sources.sources) {
      rep.context_macs += adapter_mac_count(
          make_adapter_spec(src, plan.backbone, plan.partition, l));
    }
  }
  rep.relative_context_overhead =
      rep.backbone_macs > 0
          ? static_cast<double>(rep.context_macs) / rep.backbone_macs
          : 0.0;
  return rep;
}

WallTimeStats measure_wall_time(const std::function<void()>& fn, int reps) {
  if (reps < 1) {
    throw ConfigError("measure_wall_time: reps must be positive");
  }
  fn();  // warm-up
  std::vector<double> samples;
  samples.reserve(reps);
  for (int i = 0; i < reps; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    samples.push_back(
        std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  WallTimeStats stats;
  stats.reps = reps;
  stats.hardware = hardware_descriptor();
  double sum = 0.0;
  for (double s : samples) sum += s;
  stats.mean_ms = sum / reps;
  if (reps > 1) {
    double ss = 0.0;
    for (double s : samples) ss += (s - stats.mean_ms) * (s - stats.mean_ms);
    stats.stddev_ms = std::sqrt(ss / (reps - 1));
  }
  return stats;
}

std::string hardware_descriptor() {
  struct utsname u;
  std::string desc = "unknown";
  if (uname(&u) == 0) {
    desc = std::string(u.sysname) + " " + u.machine;
  }
  desc += ", " + std::to_string(std::thread::hardware_concurrency()) +
          " hardware threads";
  return desc;
}

}  // namespace contsup
