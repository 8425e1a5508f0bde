// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Partitioning of a backbone's minimal units into K contiguous modules.
// Two strategies: equal unit counts, and balanced peak activation cost.

#pragma once

#include <string>
#include <vector>

#include "backbone/backbone.h"

namespace contsup {

struct ModuleRange {
  int begin = 0;  // first unit index, inclusive
  int end = 0;    // one past the last unit index

  int size() const { return end - begin; }
  bool operator==(const ModuleRange& o) const {
    return begin == o.begin && end == o.end;
  }
};

struct PartitionPlan {
  std::string strategy = "equal_units";
  int num_units = 0;
  std::vector<ModuleRange> modules;

  int k() const { return static_cast<int>(modules.size()); }
  std::vector<int> sizes() const {
    std::vector<int> s;
    s.reserve(modules.size());
    for (const auto& m : modules) s.push_back(m.size());
    return s;
  }
};

// Splits num_units into k contiguous modules whose sizes differ by at most
// one, earlier modules receiving the smaller sizes.
PartitionPlan partition_equal(int num_units, int k);

// Splits units into k contiguous modules minimizing the maximum per-module
// cost (sum of unit costs). Among cost-optimal plans, prefers the one that
// places fewer units in earlier modules. Costs must be non-negative.
PartitionPlan partition_memory_balanced(const std::vector<double>& unit_costs,
                                        int k);

// Convenience: builds a plan for a backbone by strategy name. The memory
// balanced strategy weighs units by their retained-activation bytes for a
// single sample (the batch factor cancels).
PartitionPlan make_partition(const BackboneSpec& spec, int k,
                             const std::string& strategy);

}  // namespace contsup
