// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Backbone description layer. A backbone is an ordered list of minimal
// units: the stem convolution and the residual blocks. Units are the atoms
// of partitioning; a module boundary never cuts through a unit.

#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "core/tensor.h"
#include "nn/layers.h"

namespace contsup {

enum class UnitKind { kStem, kBlock };

struct SpatialDims {
  int h = 0;
  int w = 0;
  bool operator==(const SpatialDims& o) const { return h == o.h && w == o.w; }
};

struct MinimalUnit {
  int index = 0;  // position in the backbone, 0-based
  UnitKind kind = UnitKind::kBlock;
  int in_channels = 0;
  int out_channels = 0;
  SpatialDims spatial_in;
  SpatialDims spatial_out;
  bool downsamples = false;

  bool projects() const {
    return kind == UnitKind::kBlock &&
           (downsamples || in_channels != out_channels);
  }
};

struct BackboneConfig {
  std::string family = "resnet";  // "resnet" or "mini"
  int depth = 32;                 // resnet: layer count 6n+2; mini: unit count
  Shape input{3, 32, 32};
  int num_classes = 10;
};

struct BackboneSpec {
  BackboneConfig config;
  std::vector<MinimalUnit> units;

  int num_units() const { return static_cast<int>(units.size()); }
  // Feature shape entering unit i (equivalently leaving unit i-1).
  Shape shape_before(int unit_index) const;
  Shape output_shape() const;
};

// Builds the unit list for a configuration. Throws ConfigError when the
// configuration is inconsistent (for a resnet family, depth must be 6n+2).
BackboneSpec build_backbone(const BackboneConfig& config);

// Activation elements a unit retains for its backward pass: the outputs of
// each convolution, normalization, and rectification, for one sample.
int64_t unit_activation_elements(const MinimalUnit& unit);

// The same, in bytes, scaled by batch size.
double unit_activation_bytes(const MinimalUnit& unit, int batch_size,
                             int bytes_per_element = 4);

// Multiply-accumulate count of a unit's convolutions for one sample.
// Normalizations and activations are excluded by convention.
int64_t unit_mac_count(const MinimalUnit& unit);

// Learnable parameter count of a unit (convolutions plus normalization
// affine pairs).
int64_t unit_param_count(const MinimalUnit& unit);

// Instantiates the layer implementing a unit. Parameters are uninitialized
// until init() is called.
std::unique_ptr<Layer<float>> make_unit_layer(const MinimalUnit& unit);

}  // namespace contsup
