// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0

#include "backbone/partition.h"

#include <limits>

#include "core/errors.h"

namespace contsup {

namespace {

void check_k(int num_units, int k) {
  if (k < 1) {
    throw ConfigError("partition: k must be >= 1, got " + std::to_string(k));
  }
  if (k > num_units) {
    throw ConfigError("partition: k=" + std::to_string(k) +
                      " exceeds the unit count " + std::to_string(num_units));
  }
}

}  // namespace

PartitionPlan partition_equal(int num_units, int k) {
  check_k(num_units, k);
  PartitionPlan plan;
  plan.strategy = "equal_units";
  plan.num_units = num_units;
  const int q = num_units / k;
  const int r = num_units % k;
  int pos = 0;
  for (int m = 0; m < k; ++m) {
    // The last r modules absorb the remainder.
    const int size = q + (m >= k - r ? 1 : 0);
    plan.modules.push_back({pos, pos + size});
    pos += size;
  }
  return plan;
}

PartitionPlan partition_memory_balanced(const std::vector<double>& unit_costs,
                                        int k) {
  const int u = static_cast<int>(unit_costs.size());
  check_k(u, k);
  for (double c : unit_costs) {
    if (c < 0) {
      throw ConfigError("partition: unit costs must be non-negative");
    }
  }

  std::vector<double> prefix(u + 1, 0.0);
  for (int i = 0; i < u; ++i) prefix[i + 1] = prefix[i] + unit_costs[i];
  auto range_cost = [&](int begin, int end) {
    return prefix[end] - prefix[begin];
  };

  // suffix_best[i][m]: minimal achievable maximum module cost when units
  // i..u-1 form exactly m modules (each non-empty). Infinity if impossible.
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> suffix_best(
      u + 1, std::vector<double>(k + 1, inf));
  suffix_best[u][0] = 0.0;
  for (int m = 1; m <= k; ++m) {
    for (int i = u - 1; i >= 0; --i) {
      double best = inf;
      for (int j = i + 1; j + (m - 1) <= u; ++j) {
        const double head = range_cost(i, j);
        const double rest = suffix_best[j][m - 1];
        if (rest == inf) continue;
        const double cand = head > rest ? head : rest;
        if (cand < best) best = cand;
      }
      suffix_best[i][m] = best;
    }
  }
  const double optimum = suffix_best[0][k];

  // Reconstruct greedily: each module takes the fewest units that keep the
  // optimum reachable, which yields the lexicographically smallest size
  // sequence and so places the smaller modules first.
  PartitionPlan plan;
  plan.strategy = "memory_balanced";
  plan.num_units = u;
  int pos = 0;
  for (int m = k; m >= 1; --m) {
    int end = pos + 1;
    while (true) {
      const double head = range_cost(pos, end);
      const double rest = suffix_best[end][m - 1];
      if (head <= optimum && rest <= optimum) break;
      ++end;
      if (end > u) {
        throw InvariantViolation("partition: reconstruction failed");
      }
    }
    plan.modules.push_back({pos, end});
    pos = end;
  }
  return plan;
}

PartitionPlan make_partition(const BackboneSpec& spec, int k,
                             const std::string& strategy) {
  if (strategy == "equal_units") {
    return partition_equal(spec.num_units(), k);
  }
  if (strategy == "memory_balanced") {
    std::vector<double> costs;
    costs.reserve(spec.units.size());
    for (const auto& unit : spec.units) {
      costs.push_back(unit_activation_bytes(unit, /*batch_size=*/1));
    }
    return partition_memory_balanced(costs, k);
  }
  throw ConfigError("partition: unknown strategy '" + strategy + "'");
}

}  // namespace contsup
