// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0

#include "backbone/backbone.h"

#include <algorithm>

#include "core/errors.h"

namespace contsup {

namespace {

// Stage widths double and resolution halves at each stage entry after the
// first. Returns per-stage block counts, earlier stages taking the smaller
// share when the split is uneven.
std::vector<int> split_blocks(int blocks, int stages) {
  std::vector<int> sizes(stages, blocks / stages);
  const int extra = blocks % stages;
  for (int s = stages - extra; s < stages; ++s) sizes[s] += 1;
  return sizes;
}

void append_block(std::vector<MinimalUnit>& units, int cin, int cout,
                  bool downsamples, SpatialDims in) {
  MinimalUnit u;
  u.index = static_cast<int>(units.size());
  u.kind = UnitKind::kBlock;
  u.in_channels = cin;
  u.out_channels = cout;
  u.spatial_in = in;
  u.spatial_out = downsamples ? SpatialDims{in.h / 2, in.w / 2} : in;
  u.downsamples = downsamples;
  units.push_back(u);
}

}  // namespace

Shape BackboneSpec::shape_before(int unit_index) const {
  if (unit_index < 0 || unit_index > num_units()) {
    throw InvariantViolation("shape_before: unit index out of range");
  }
  if (unit_index == 0) return config.input;
  const MinimalUnit& u = units[unit_index - 1];
  return Shape{u.out_channels, u.spatial_out.h, u.spatial_out.w};
}

Shape BackboneSpec::output_shape() const { return shape_before(num_units()); }

BackboneSpec build_backbone(const BackboneConfig& config) {
  if (config.input.c <= 0 || config.input.h <= 0 || config.input.w <= 0) {
    throw ConfigError("backbone: input shape must be positive, got " +
                      config.input.str());
  }
  if (config.num_classes < 2) {
    throw ConfigError("backbone: num_classes must be at least 2");
  }

  int blocks = 0;
  int stages = 0;
  if (config.family == "resnet") {
    if (config.depth < 8 || (config.depth - 2) % 6 != 0) {
      throw ConfigError(
          "backbone: resnet depth must be 6n+2 for n >= 1, got " +
          std::to_string(config.depth));
    }
    blocks = (config.depth - 2) / 2;
    stages = 3;
  } else if (config.family == "mini") {
    if (config.depth < 2) {
      throw ConfigError("backbone: mini depth (unit count) must be >= 2, got " +
                        std::to_string(config.depth));
    }
    blocks = config.depth - 1;
    stages = std::min(3, blocks);
  } else {
    throw ConfigError("backbone: unknown family '" + config.family + "'");
  }

  const int halvings = stages - 1;
  if (config.input.h % (1 << halvings) != 0 ||
      config.input.w % (1 << halvings) != 0) {
    throw ConfigError("backbone: input " + config.input.str() +
                      " is not divisible by the stage downsampling factor " +
                      std::to_string(1 << halvings));
  }

  BackboneSpec spec;
  spec.config = config;

  // The standard family uses the 16/32/64 progression; the mini family is a
  // deliberately narrow stack for fast desk-scale experiments.
  std::vector<int> stage_width(stages);
  for (int s = 0; s < stages; ++s) {
    stage_width[s] = config.family == "mini" ? 8 * (s + 1) : 16 << s;
  }

  MinimalUnit stem;
  stem.index = 0;
  stem.kind = UnitKind::kStem;
  stem.in_channels = config.input.c;
  stem.out_channels = stage_width[0];
  stem.spatial_in = {config.input.h, config.input.w};
  stem.spatial_out = stem.spatial_in;
  stem.downsamples = false;
  spec.units.push_back(stem);

  const std::vector<int> per_stage = split_blocks(blocks, stages);
  int channels = stem.out_channels;
  SpatialDims dims = stem.spatial_out;
  for (int s = 0; s < stages; ++s) {
    const int cout = stage_width[s];
    for (int b = 0; b < per_stage[s]; ++b) {
      const bool entry = (b == 0 && s > 0);
      append_block(spec.units, channels, cout, entry, dims);
      channels = cout;
      dims = spec.units.back().spatial_out;
    }
  }
  return spec;
}

int64_t unit_activation_elements(const MinimalUnit& unit) {
  const int64_t out_plane = static_cast<int64_t>(unit.out_channels) *
                            unit.spatial_out.h * unit.spatial_out.w;
  if (unit.kind == UnitKind::kStem) {
    // conv, norm, relu
    return 3 * out_plane;
  }
  // Two conv/norm/relu trios, plus the projection conv/norm pair when the
  // skip path is not the identity.
  int64_t total = 6 * out_plane;
  if (unit.projects()) total += 2 * out_plane;
  return total;
}

double unit_activation_bytes(const MinimalUnit& unit, int batch_size,
                             int bytes_per_element) {
  return static_cast<double>(unit_activation_elements(unit)) * batch_size *
         bytes_per_element;
}

int64_t unit_mac_count(const MinimalUnit& unit) {
  const int64_t out_hw =
      static_cast<int64_t>(unit.spatial_out.h) * unit.spatial_out.w;
  if (unit.kind == UnitKind::kStem) {
    return static_cast<int64_t>(unit.in_channels) * unit.out_channels * 9 *
           out_hw;
  }
  int64_t macs = static_cast<int64_t>(unit.in_channels) * unit.out_channels *
                 9 * out_hw;
  macs += static_cast<int64_t>(unit.out_channels) * unit.out_channels * 9 *
          out_hw;
  if (unit.projects()) {
    macs += static_cast<int64_t>(unit.in_channels) * unit.out_channels * out_hw;
  }
  return macs;
}

int64_t unit_param_count(const MinimalUnit& unit) {
  if (unit.kind == UnitKind::kStem) {
    return static_cast<int64_t>(unit.in_channels) * unit.out_channels * 9 +
           2 * unit.out_channels;
  }
  int64_t params = static_cast<int64_t>(unit.in_channels) * unit.out_channels * 9 +
                   2 * unit.out_channels;
  params += static_cast<int64_t>(unit.out_channels) * unit.out_channels * 9 +
            2 * unit.out_channels;
  if (unit.projects()) {
    params += static_cast<int64_t>(unit.in_channels) * unit.out_channels +
              2 * unit.out_channels;
  }
  return params;
}

std::unique_ptr<Layer<float>> make_unit_layer(const MinimalUnit& unit) {
  if (unit.kind == UnitKind::kStem) {
    return std::make_unique<StemBlock<float>>(unit.in_channels,
                                              unit.out_channels);
  }
  return std::make_unique<ResidualBlock<float>>(
      unit.in_channels, unit.out_channels, unit.downsamples ? 2 : 1);
}

}  // namespace contsup
