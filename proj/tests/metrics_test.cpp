// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Analytic cost accounting: conservation across partitions, peak-memory
// reduction, context compute attribution, and unit scaling.

#include <cstdint>
#include <string>
#include <tuple>
#include <vector>

#include "backbone/backbone.h"
#include "cli/config.h"
#include "cli/runner.h"
#include "context/context.h"
#include "doctest.h"
#include "metrics/metrics.h"

using namespace contsup;

namespace {

NetworkPlan plan_of(const std::string& family, int depth, int image_hw, int k,
                    const std::string& mode) {
  RunConfig cfg;
  cfg.backbone.family = family;
  cfg.backbone.depth = depth;
  cfg.partition.k = k;
  cfg.context.mode = mode;
  return plan_from_config(cfg, Shape{3, image_hw, image_hw}, 10);
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("unpartitioned peak equals the end-to-end figure") {
  for (const auto& [family, depth, hw] :
       {std::tuple{std::string("resnet"), 32, 32},
        std::tuple{std::string("mini"), 8, 16}}) {
    const MemoryAccount acc =
        account_memory(plan_of(family, depth, hw, 1, "R0"), 128);
    CHECK(acc.k == 1);
    CHECK(acc.batch_size == 128);
    CHECK(acc.peak_training_bytes == acc.e2e_training_bytes);
  }
}

TEST_CASE("backbone activations are conserved across partitionings") {
  auto total = [](const MemoryAccount& acc) {
    double sum = 0.0;
    for (double b : acc.module_activation_bytes) sum += b;
    return sum;
  };
  const double reference = total(account_memory(plan_of("resnet", 32, 32, 1, "R0"), 64));
  for (int k : {2, 4, 8, 16}) {
    const MemoryAccount acc =
        account_memory(plan_of("resnet", 32, 32, k, "R0"), 64);
    REQUIRE(static_cast<int>(acc.module_activation_bytes.size()) == k);
    CHECK(total(acc) == reference);
  }
}

TEST_CASE("partitioning lowers peak training memory") {
  for (const auto& [family, depth, hw, k] :
       {std::tuple{std::string("resnet"), 32, 32, 8},
        std::tuple{std::string("mini"), 8, 16, 4}}) {
    const MemoryAccount one = account_memory(plan_of(family, depth, hw, 1, "R0"), 128);
    const MemoryAccount many = account_memory(plan_of(family, depth, hw, k, "R0"), 128);
    CHECK(many.peak_training_bytes < one.peak_training_bytes);
    // The end-to-end reference does not depend on the partition.
    CHECK(many.e2e_training_bytes == one.e2e_training_bytes);
  }
}

TEST_CASE("optimizer state mirrors the parameters") {
  const MemoryAccount acc = account_memory(plan_of("mini", 8, 16, 4, "R1E"), 32);
  CHECK(acc.param_bytes > 0.0);
  CHECK(acc.optimizer_state_bytes == acc.param_bytes);
}

TEST_CASE("element width scales every byte figure") {
  const NetworkPlan plan = plan_of("mini", 8, 16, 4, "E");
  const MemoryAccount f32 = account_memory(plan, 64, 4);
  const MemoryAccount f64 = account_memory(plan, 64, 8);
  CHECK(f64.param_bytes == 2.0 * f32.param_bytes);
  CHECK(f64.optimizer_state_bytes == 2.0 * f32.optimizer_state_bytes);
  CHECK(f64.peak_training_bytes == 2.0 * f32.peak_training_bytes);
  CHECK(f64.e2e_training_bytes == 2.0 * f32.e2e_training_bytes);
  for (size_t i = 0; i < f32.module_activation_bytes.size(); ++i) {
    CHECK(f64.module_activation_bytes[i] == 2.0 * f32.module_activation_bytes[i]);
    CHECK(f64.module_aux_bytes[i] == 2.0 * f32.module_aux_bytes[i]);
  }
}

TEST_CASE("baseline mode has no context cost") {
  for (int k : {1, 4, 8}) {
    const OverheadReport rep = account_overhead(plan_of("resnet", 32, 32, k, "R0"));
    CHECK(rep.context_macs == 0);
    CHECK(rep.relative_context_overhead == 0.0);
    CHECK(rep.backbone_macs > 0);
  }
}

TEST_CASE("backbone compute matches a direct unit sum") {
  const NetworkPlan plan = plan_of("resnet", 32, 32, 4, "R0");
  int64_t units = 0;
  for (const auto& u : plan.backbone.units) units += unit_mac_count(u);
  const Shape out = plan.backbone.output_shape();
  const int64_t final_head = static_cast<int64_t>(out.c) * 10;
  const OverheadReport rep = account_overhead(plan);
  CHECK(rep.backbone_macs == units + final_head);
}

TEST_CASE("auxiliary compute appears only with interior modules") {
  CHECK(account_overhead(plan_of("resnet", 32, 32, 1, "R0")).aux_head_macs == 0);
  CHECK(account_overhead(plan_of("resnet", 32, 32, 4, "R0")).aux_head_macs > 0);
}

TEST_CASE("origin-encoder overhead grows with the module count") {
  double prev = 0.0;
  for (int k : {2, 4, 8, 16}) {
    const OverheadReport rep = account_overhead(plan_of("resnet", 32, 32, k, "E"));
    CHECK(rep.relative_context_overhead > prev);
    prev = rep.relative_context_overhead;
  }
}

TEST_CASE("context compute matches the adapter enumeration") {
  for (const auto& mode : {std::string("E"), std::string("R2"),
                           std::string("M1R1E")}) {
    const NetworkPlan plan = plan_of("mini", 8, 16, 4, mode);
    const ContextSpec spec = parse_context_tag(mode);
    const auto all = resolve_all_sources(spec, 4);
    int64_t expected = 0;
    for (const auto& mod : all) {
      for (const auto& src : mod.sources) {
        expected += adapter_mac_count(make_adapter_spec(
            src, plan.backbone, plan.partition, mod.module_index));
      }
    }
    const OverheadReport rep = account_overhead(plan);
    CHECK(rep.context_macs == expected);
    if (mode != "E") CHECK(rep.context_macs > 0);
  }
}

TEST_SUITE_END();
