// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a single JSON document describing one experiment.
// Parsing is strict (unknown keys are rejected, recursively) and
// round-trippable. A sweep document uses the same schema but may replace
// any scalar leaf with a list of values; expansion takes the cartesian
// product in document order.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "data/datasets.h"
#include "json.hpp"

namespace contsup {

struct RunConfig {
  struct Backbone {
    std::string family = "mini";
    int depth = 8;
  } backbone;

  struct Partition {
    int k = 1;
    std::string strategy = "equal_units";
  } partition;

  struct Context {
    std::string mode = "R0";
    // Per-module tag overrides for hybrid schemes; element m overrides
    // module m+1, empty string means no override.
    std::vector<std::string> per_module;
    bool detach = true;
    bool adapter_zero_init = true;
  } context;

  struct Objective {
    std::string head = "softmax";
    double temperature = 0.5;
    bool decoder_on = false;
    double lambda_rec = 1.0;
  } objective;

  struct Training {
    int epochs = 10;
    int batch_size = 64;
    int eval_batch_size = 256;
    double lr = 0.2;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    std::string schedule = "cosine";
    std::vector<int> milestones;
    double gamma = 0.1;
    bool prefetch = false;
  } training;

  struct DatasetCfg {
    std::string name = "toy";
    std::string root;  // empty: use --root / environment / ./data
    bool augment = true;
    struct Toy {
      int train_per_class = 200;
      int test_per_class = 40;
      int image_hw = 16;
      double noise = 0.05;
      int distractors = 2;
    } toy;
  } dataset;

  std::vector<uint64_t> seeds{0};
  std::string output_dir = "runs/out";

  ToyParams toy_params() const;
};

// Serializes with every field present, keys sorted.
nlohmann::json run_config_json(const RunConfig& config);

// Strict parse: unknown keys, type mismatches, and out-of-range values
// raise ConfigError. Missing keys take defaults.
RunConfig parse_run_config(const nlohmann::json& doc);

// Reads a JSON document; open or parse failures raise ConfigError.
nlohmann::json load_json_document(const std::string& path);

RunConfig load_run_config(const std::string& path);

// Expands a sweep document into concrete configurations. Scalar leaves may
// hold lists; list-typed leaves (seeds, milestones, per_module) may not.
std::vector<RunConfig> expand_sweep(const nlohmann::json& doc);

// Stable short hash of the canonical serialization, for provenance.
std::string config_fingerprint(const RunConfig& config);

}  // namespace contsup
