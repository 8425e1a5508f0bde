// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Feature dump container: per-module feature arrays in one flat binary
// file, indexed by a JSON manifest. Each block in the binary starts with a
// small header (magic, module index, shape) followed by float32 data; the
// manifest repeats the directory with byte offsets plus the sample labels,
// so a single block can be loaded without scanning the file.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "core/tensor.h"

namespace contsup {

struct FeatureDump {
  std::vector<int> labels;
  // (module_index, features); features are (n, c, h, w) with n equal to
  // labels.size().
  std::vector<std::pair<int, Tensor>> blocks;
};

// Writes <base>.bin and <base>.json.
void write_feature_dump(const std::string& base_path, const FeatureDump& dump);

// Reads every block back.
FeatureDump read_feature_dump(const std::string& base_path);

// Loads one module's features (and labels) without touching other blocks.
Tensor read_feature_block(const std::string& base_path, int module_index,
                          std::vector<int>* labels = nullptr);

}  // namespace contsup
