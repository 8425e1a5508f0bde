// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0

#include "data/archive.h"

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "core/errors.h"

namespace contsup {

std::vector<uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IngestError("cannot open file: " + path);
  }
  in.seekg(0, std::ios::end);
  const std::streamoff size = in.tellg();
  in.seekg(0, std::ios::beg);
  std::vector<uint8_t> bytes(static_cast<size_t>(size));
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), size)) {
    throw IngestError("failed to read file: " + path);
  }
  return bytes;
}

void write_file_bytes(const std::string& path, const void* data, size_t size) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IngestError("cannot open file for writing: " + path);
  }
  out.write(reinterpret_cast<const char*>(data),
            static_cast<std::streamsize>(size));
  if (!out) {
    throw IngestError("failed to write file: " + path);
  }
}

std::vector<uint8_t> inflate_bytes(const uint8_t* data, size_t size) {
  z_stream strm;
  std::memset(&strm, 0, sizeof(strm));
  // 15 window bits; +32 auto-detects a gzip or zlib wrapper.
  if (inflateInit2(&strm, 15 + 32) != Z_OK) {
    throw IngestError("inflate: initialization failed");
  }
  strm.next_in = const_cast<Bytef*>(data);
  strm.avail_in = static_cast<uInt>(size);

  std::vector<uint8_t> out;
  std::vector<uint8_t> chunk(1 << 18);
  int ret = Z_OK;
  do {
    strm.next_out = chunk.data();
    strm.avail_out = static_cast<uInt>(chunk.size());
    ret = inflate(&strm, Z_NO_FLUSH);
    if (ret != Z_OK && ret != Z_STREAM_END) {
      inflateEnd(&strm);
      throw IngestError("inflate: corrupt compressed stream (code " +
                        std::to_string(ret) + ")");
    }
    out.insert(out.end(), chunk.data(),
               chunk.data() + (chunk.size() - strm.avail_out));
  } while (ret != Z_STREAM_END && (strm.avail_in > 0 || strm.avail_out == 0));
  inflateEnd(&strm);
  if (ret != Z_STREAM_END) {
    throw IngestError("inflate: truncated compressed stream");
  }
  return out;
}

std::vector<uint8_t> inflate_bytes(const std::vector<uint8_t>& data) {
  return inflate_bytes(data.data(), data.size());
}

namespace {

bool is_zero_block(const uint8_t* block) {
  for (int i = 0; i < 512; ++i) {
    if (block[i] != 0) return false;
  }
  return true;
}

uint64_t parse_octal(const uint8_t* field, int width) {
  uint64_t value = 0;
  for (int i = 0; i < width; ++i) {
    const char c = static_cast<char>(field[i]);
    if (c == '\0' || c == ' ') break;
    if (c < '0' || c > '7') {
      throw IngestError("tar: malformed octal size field");
    }
    value = value * 8 + static_cast<uint64_t>(c - '0');
  }
  return value;
}

std::string header_name(const uint8_t* block) {
  std::string name(reinterpret_cast<const char*>(block),
                   strnlen(reinterpret_cast<const char*>(block), 100));
  const char* prefix = reinterpret_cast<const char*>(block + 345);
  const size_t prefix_len = strnlen(prefix, 155);
  if (prefix_len > 0 &&
      std::memcmp(block + 257, "ustar", 5) == 0) {
    return std::string(prefix, prefix_len) + "/" + name;
  }
  return name;
}

}  // namespace

std::vector<TarEntry> untar_bytes(const std::vector<uint8_t>& bytes) {
  std::vector<TarEntry> entries;
  size_t pos = 0;
  std::string pending_long_name;
  while (pos + 512 <= bytes.size()) {
    const uint8_t* block = bytes.data() + pos;
    if (is_zero_block(block)) break;
    const uint64_t size = parse_octal(block + 124, 12);
    const char type = static_cast<char>(block[156]);
    const size_t data_start = pos + 512;
    const size_t padded = (size + 511) & ~uint64_t{511};
    if (data_start + size > bytes.size()) {
      throw IngestError("tar: entry overruns archive");
    }
    if (type == 'L') {
      // GNU long-name extension: the data block carries the next entry's
      // path.
      pending_long_name.assign(
          reinterpret_cast<const char*>(bytes.data() + data_start),
          strnlen(reinterpret_cast<const char*>(bytes.data() + data_start),
                  size));
    } else if (type == '0' || type == '\0') {
      TarEntry entry;
      entry.name =
          pending_long_name.empty() ? header_name(block) : pending_long_name;
      pending_long_name.clear();
      entry.data.assign(bytes.data() + data_start,
                        bytes.data() + data_start + size);
      entries.push_back(std::move(entry));
    } else {
      pending_long_name.clear();
    }
    pos = data_start + padded;
  }
  return entries;
}

void extract_tar_archive(const std::string& archive_path,
                         const std::string& dest_dir) {
  std::vector<uint8_t> bytes = read_file_bytes(archive_path);
  if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) {
    bytes = inflate_bytes(bytes);
  }
  const std::vector<TarEntry> entries = untar_bytes(bytes);
  if (entries.empty()) {
    throw IngestError("tar: no regular files in archive " + archive_path);
  }
  namespace fs = std::filesystem;
  for (const TarEntry& entry : entries) {
    const fs::path rel(entry.name);
    if (rel.is_absolute()) {
      throw IngestError("tar: absolute path in archive: " + entry.name);
    }
    for (const auto& part : rel) {
      if (part == "..") {
        throw IngestError("tar: parent-escaping path in archive: " +
                          entry.name);
      }
    }
    const fs::path target = fs::path(dest_dir) / rel;
    fs::create_directories(target.parent_path());
    write_file_bytes(target.string(), entry.data.data(), entry.data.size());
  }
}

}  // namespace contsup
