// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic SVG figures rendered from run records only. Every figure is
// a pure function of its input files, so plots can be regenerated
// bit-identically without checkpoints or retraining.

#pragma once

#include <string>
#include <vector>

namespace contsup {

// kind: error_vs_K | error_vs_memory | info_curve | adapter_weight_heatmap.
// inputs: summary.json paths for the error plots and the heatmap,
// info_curve.csv paths for the information curves. Writes an .svg file.
void render_plot(const std::string& kind,
                 const std::vector<std::string>& inputs,
                 const std::string& output_path);

}  // namespace contsup
