// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal Level 5 MAT-file reader: little-endian files, real numeric
// arrays, zlib-compressed elements. This covers the digit-dataset files,
// which hold exactly one uint8 image array and one label array.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace contsup {

struct MatVar {
  std::string name;
  std::vector<int64_t> dims;     // column-major dimension list
  uint32_t storage_type = 0;     // on-disk element type of the real part
  std::vector<uint8_t> raw;      // real-part payload, column-major

  int64_t element_count() const {
    int64_t n = dims.empty() ? 0 : 1;
    for (int64_t d : dims) n *= d;
    return n;
  }

  // Element i (column-major linear index) converted to double.
  double value_at(int64_t i) const;
};

std::vector<MatVar> read_mat5(const std::string& path);

// The variable named `name`, or an ingestion error naming the file.
const MatVar& find_mat_var(const std::vector<MatVar>& vars,
                           const std::string& name, const std::string& path);

}  // namespace contsup
