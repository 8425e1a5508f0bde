// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Run orchestration: builds networks from configurations, executes
// training for every seed, and persists run records (config snapshot,
// per-epoch metrics CSV, summary JSON, best checkpoint). Sweeps expand a
// grid document and execute each configuration, optionally in worker
// processes.

#pragma once

#include <string>
#include <vector>

#include "cli/config.h"
#include "engine/engine.h"
#include "json.hpp"
#include "probe/probe.h"

namespace contsup {

// The network plan a configuration describes for a given input geometry.
NetworkPlan plan_from_config(const RunConfig& cfg, Shape input,
                             int num_classes);

// Input shape and class count per dataset name, without touching disk.
Shape dataset_input_shape(const RunConfig& cfg);
int dataset_num_classes(const RunConfig& cfg);

// Dataset root resolution: config value, then the CONTSUP_DATA_ROOT
// environment variable, then "./data".
std::string resolve_data_root(const RunConfig& cfg);

// Directory name of one run, deterministic in (config, seed).
std::string run_name(const RunConfig& cfg, uint64_t seed);

struct SeedRunResult {
  uint64_t seed = 0;
  std::string run_dir;
  TrainOutcome outcome;
};

// Trains every seed of a configuration and writes run records under
// cfg.output_dir. Numeric failures mark the seed's record and outcome;
// other errors propagate.
std::vector<SeedRunResult> run_config(const RunConfig& cfg,
                                      bool verbose = true);

// Expands a sweep document and runs each configuration. With parallel
// execution, worker processes (re-invocations of self_exe) handle disjoint
// configurations. Returns the number of failed configurations.
int run_sweep(const nlohmann::json& doc, bool parallel, int max_procs,
              const std::string& self_exe, bool verbose = true);

// Rebuilds the network of a finished run from its record, loads the best
// checkpoint, and probes per-module features of the requested split
// ("train" or "test"). Writes info_curve.csv into the run directory and
// optionally a feature dump.
std::vector<InfoEstimate> probe_run(const std::string& run_dir,
                                    const ProbeConfig& probe_config,
                                    int max_samples, const std::string& split,
                                    bool dump_features);

// Analytic accounting of a configuration (no dataset access).
nlohmann::json account_config(const RunConfig& cfg);

// Partition/context structure of a configuration (no dataset access).
nlohmann::json build_plan_json(const RunConfig& cfg);

// Writes text atomically (temporary file + rename).
void write_text_atomic(const std::string& path, const std::string& text);

}  // namespace contsup
