// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Self-describing binary checkpoints. Layout:
//
//   bytes 0..3   magic "CSUP"
//   bytes 4..7   format version (u32, little-endian)
//   bytes 8..15  JSON header length (u64, little-endian)
//   ...          JSON header: caller metadata plus a tensor directory of
//                {name, n, c, h, w, offset} entries (offset in float units
//                from the start of the data section)
//   ...          raw float32 data, little-endian
//
// Saved tensors are every module's parameter values, their optimizer
// momentum buffers, and persistent layer state (normalization running
// statistics). Loading validates shapes against the receiving network.

#pragma once

#include <string>

#include "engine/engine.h"
#include "json.hpp"

namespace contsup {

void save_checkpoint(const std::string& path, const Network& net,
                     const nlohmann::json& meta);

// Restores tensors into an already-built network of the identical plan.
// Returns the metadata stored at save time. Throws IngestError on a
// malformed file or a layout mismatch.
nlohmann::json load_checkpoint(const std::string& path, Network& net);

// Reads only the metadata header.
nlohmann::json read_checkpoint_meta(const std::string& path);

}  // namespace contsup
