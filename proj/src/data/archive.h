// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal archive handling for dataset ingestion: whole-buffer gzip/zlib
// decompression and ustar tape-archive extraction.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace contsup {

std::vector<uint8_t> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const void* data, size_t size);

// Decompresses a gzip- or zlib-wrapped buffer (auto-detected).
std::vector<uint8_t> inflate_bytes(const uint8_t* data, size_t size);
std::vector<uint8_t> inflate_bytes(const std::vector<uint8_t>& data);

struct TarEntry {
  std::string name;
  std::vector<uint8_t> data;
};

// Regular files of a ustar archive (GNU long names supported, other entry
// kinds skipped).
std::vector<TarEntry> untar_bytes(const std::vector<uint8_t>& bytes);

// Unpacks a .tar.gz (or plain .tar) archive under dest_dir, creating
// directories as needed. Entries with absolute or parent-escaping paths are
// rejected.
void extract_tar_archive(const std::string& archive_path,
                         const std::string& dest_dir);

}  // namespace contsup
