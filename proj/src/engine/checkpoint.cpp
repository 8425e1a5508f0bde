// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0

#include "engine/checkpoint.h"

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <vector>

#include "core/errors.h"

namespace contsup {

namespace {

constexpr char kMagic[4] = {'C', 'S', 'U', 'P'};
constexpr uint32_t kVersion = 1;

struct Entry {
  std::string name;
  Tensor* tensor;
};

// Stable enumeration of everything a checkpoint carries. Order follows the
// module list, and within a module: parameter values, then their momentum
// buffers, then persistent layer state.
std::vector<Entry> enumerate_tensors(const Network& net) {
  std::vector<Entry> entries;
  for (const auto& m : net.modules) {
    const std::string prefix = "m" + std::to_string(m.index) + "/";
    for (size_t i = 0; i < m.params.size(); ++i) {
      entries.push_back(
          {prefix + "p" + std::to_string(i), &m.params[i]->value});
    }
    for (size_t i = 0; i < m.params.size(); ++i) {
      entries.push_back(
          {prefix + "p" + std::to_string(i) + ".momentum",
           &m.params[i]->momentum});
    }
    for (size_t i = 0; i < m.buffers.size(); ++i) {
      entries.push_back({prefix + "b" + std::to_string(i), m.buffers[i]});
    }
  }
  return entries;
}

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

nlohmann::json read_header(std::istream& is, const std::string& path) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0) {
    throw IngestError("checkpoint '" + path + "': bad magic");
  }
  const uint32_t version = read_u32(is);
  if (version != kVersion) {
    throw IngestError("checkpoint '" + path + "': unsupported version " +
                      std::to_string(version));
  }
  const uint64_t header_len = read_u64(is);
  std::string header(header_len, '\0');
  is.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!is) {
    throw IngestError("checkpoint '" + path + "': truncated header");
  }
  try {
    return nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw IngestError("checkpoint '" + path + "': header is not valid JSON (" +
                      e.what() + ")");
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Network& net,
                     const nlohmann::json& meta) {
  const auto entries = enumerate_tensors(net);
  nlohmann::json dir = nlohmann::json::array();
  uint64_t offset = 0;
  for (const auto& e : entries) {
    dir.push_back({{"name", e.name},
                   {"n", e.tensor->n()},
                   {"c", e.tensor->c()},
                   {"h", e.tensor->h()},
                   {"w", e.tensor->w()},
                   {"offset", offset}});
    offset += static_cast<uint64_t>(e.tensor->numel());
  }
  nlohmann::json header = {{"meta", meta}, {"tensors", dir}};
  const std::string header_str = header.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) {
      throw IngestError("checkpoint: cannot open '" + tmp + "' for writing");
    }
    os.write(kMagic, 4);
    write_u32(os, kVersion);
    write_u64(os, header_str.size());
    os.write(header_str.data(),
             static_cast<std::streamsize>(header_str.size()));
    for (const auto& e : entries) {
      os.write(reinterpret_cast<const char*>(e.tensor->data()),
               static_cast<std::streamsize>(e.tensor->numel() * sizeof(float)));
    }
    if (!os) {
      throw IngestError("checkpoint: write to '" + tmp + "' failed");
    }
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw IngestError("checkpoint: cannot move '" + tmp + "' into place");
  }
}

nlohmann::json load_checkpoint(const std::string& path, Network& net) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw IngestError("checkpoint '" + path + "': cannot open");
  }
  nlohmann::json header = read_header(is, path);
  const auto entries = enumerate_tensors(net);
  const auto& dir = header.at("tensors");
  if (dir.size() != entries.size()) {
    throw IngestError("checkpoint '" + path + "': holds " +
                      std::to_string(dir.size()) + " tensors, network needs " +
                      std::to_string(entries.size()));
  }
  const std::streampos data_start = is.tellg();
  for (size_t i = 0; i < entries.size(); ++i) {
    const auto& d = dir[i];
    Tensor& t = *entries[i].tensor;
    if (d.at("name").get<std::string>() != entries[i].name ||
        d.at("n").get<int>() != t.n() || d.at("c").get<int>() != t.c() ||
        d.at("h").get<int>() != t.h() || d.at("w").get<int>() != t.w()) {
      throw IngestError("checkpoint '" + path + "': tensor " +
                        std::to_string(i) + " (" + entries[i].name +
                        ") does not match the network layout");
    }
    const uint64_t offset = d.at("offset").get<uint64_t>();
    is.seekg(data_start +
             static_cast<std::streamoff>(offset * sizeof(float)));
    is.read(reinterpret_cast<char*>(t.data()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!is) {
      throw IngestError("checkpoint '" + path + "': truncated data for " +
                        entries[i].name);
    }
  }
  return header.at("meta");
}

nlohmann::json read_checkpoint_meta(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) {
    throw IngestError("checkpoint '" + path + "': cannot open");
  }
  return read_header(is, path).at("meta");
}

}  // namespace contsup
