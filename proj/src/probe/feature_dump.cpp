// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0

#include "probe/feature_dump.h"

#include <cstdint>
#include <cstring>
#include <fstream>

#include "core/errors.h"
#include "json.hpp"

namespace contsup {

namespace {

constexpr char kBlockMagic[4] = {'C', 'S', 'F', 'B'};

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

nlohmann::json load_manifest(const std::string& base_path) {
  std::ifstream is(base_path + ".json");
  if (!is) {
    throw IngestError("feature dump: cannot open manifest '" + base_path +
                      ".json'");
  }
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw IngestError("feature dump: malformed manifest: " +
                      std::string(e.what()));
  }
}

Tensor read_block_at(std::ifstream& is, const std::string& path,
                     uint64_t offset, int expect_module) {
  is.seekg(static_cast<std::streamoff>(offset));
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kBlockMagic, 4) != 0) {
    throw IngestError("feature dump '" + path + "': bad block magic");
  }
  const uint32_t module_index = read_u32(is);
  const uint32_t n = read_u32(is), c = read_u32(is), h = read_u32(is),
                 w = read_u32(is);
  if (static_cast<int>(module_index) != expect_module) {
    throw IngestError("feature dump '" + path + "': manifest points at module " +
                      std::to_string(expect_module) + " but block holds " +
                      std::to_string(module_index));
  }
  Tensor t(static_cast<int>(n), static_cast<int>(c), static_cast<int>(h),
           static_cast<int>(w));
  is.read(reinterpret_cast<char*>(t.data()),
          static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (!is) {
    throw IngestError("feature dump '" + path + "': truncated block");
  }
  return t;
}

}  // namespace

void write_feature_dump(const std::string& base_path,
                        const FeatureDump& dump) {
  const std::string bin_path = base_path + ".bin";
  nlohmann::json manifest;
  manifest["labels"] = dump.labels;
  nlohmann::json dir = nlohmann::json::array();

  std::ofstream os(bin_path, std::ios::binary | std::ios::trunc);
  if (!os) {
    throw IngestError("feature dump: cannot open '" + bin_path +
                      "' for writing");
  }
  uint64_t offset = 0;
  for (const auto& [module_index, features] : dump.blocks) {
    if (features.n() != static_cast<int>(dump.labels.size())) {
      throw InvariantViolation(
          "feature dump: block sample count does not match labels");
    }
    dir.push_back({{"module_index", module_index},
                   {"n", features.n()},
                   {"c", features.c()},
                   {"h", features.h()},
                   {"w", features.w()},
                   {"offset", offset}});
    os.write(kBlockMagic, 4);
    write_u32(os, static_cast<uint32_t>(module_index));
    write_u32(os, static_cast<uint32_t>(features.n()));
    write_u32(os, static_cast<uint32_t>(features.c()));
    write_u32(os, static_cast<uint32_t>(features.h()));
    write_u32(os, static_cast<uint32_t>(features.w()));
    os.write(reinterpret_cast<const char*>(features.data()),
             static_cast<std::streamsize>(features.numel() * sizeof(float)));
    offset += 24 + static_cast<uint64_t>(features.numel()) * sizeof(float);
  }
  if (!os) {
    throw IngestError("feature dump: write to '" + bin_path + "' failed");
  }
  manifest["blocks"] = dir;
  std::ofstream ms(base_path + ".json", std::ios::trunc);
  ms << manifest.dump(2) << "\n";
  if (!ms) {
    throw IngestError("feature dump: cannot write manifest for '" + base_path +
                      "'");
  }
}

FeatureDump read_feature_dump(const std::string& base_path) {
  const nlohmann::json manifest = load_manifest(base_path);
  FeatureDump dump;
  dump.labels = manifest.at("labels").get<std::vector<int>>();
  std::ifstream is(base_path + ".bin", std::ios::binary);
  if (!is) {
    throw IngestError("feature dump: cannot open '" + base_path + ".bin'");
  }
  for (const auto& entry : manifest.at("blocks")) {
    const int module_index = entry.at("module_index").get<int>();
    dump.blocks.emplace_back(
        module_index, read_block_at(is, base_path, entry.at("offset"),
                                    module_index));
  }
  return dump;
}

Tensor read_feature_block(const std::string& base_path, int module_index,
                          std::vector<int>* labels) {
  const nlohmann::json manifest = load_manifest(base_path);
  if (labels) *labels = manifest.at("labels").get<std::vector<int>>();
  std::ifstream is(base_path + ".bin", std::ios::binary);
  if (!is) {
    throw IngestError("feature dump: cannot open '" + base_path + ".bin'");
  }
  for (const auto& entry : manifest.at("blocks")) {
    if (entry.at("module_index").get<int>() == module_index) {
      return read_block_at(is, base_path, entry.at("offset"), module_index);
    }
  }
  throw IngestError("feature dump '" + base_path + "': no block for module " +
                    std::to_string(module_index));
}

}  // namespace contsup
