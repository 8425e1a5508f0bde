// Copyright (c) 2026, the contsup authors
// SPDX-License-Identifier: Apache-2.0

#include "data/mat5.h"

#include <cstring>

#include "core/errors.h"
#include "data/archive.h"

namespace contsup {

namespace {

// On-disk element type codes.
constexpr uint32_t kMiInt8 = 1;
constexpr uint32_t kMiUint8 = 2;
constexpr uint32_t kMiInt16 = 3;
constexpr uint32_t kMiUint16 = 4;
constexpr uint32_t kMiInt32 = 5;
constexpr uint32_t kMiUint32 = 6;
constexpr uint32_t kMiSingle = 7;
constexpr uint32_t kMiDouble = 9;
constexpr uint32_t kMiInt64 = 12;
constexpr uint32_t kMiUint64 = 13;
constexpr uint32_t kMiMatrix = 14;
constexpr uint32_t kMiCompressed = 15;

size_t storage_size(uint32_t type) {
  switch (type) {
    case kMiInt8:
    case kMiUint8:
      return 1;
    case kMiInt16:
    case kMiUint16:
      return 2;
    case kMiInt32:
    case kMiUint32:
    case kMiSingle:
      return 4;
    case kMiDouble:
    case kMiInt64:
    case kMiUint64:
      return 8;
    default:
      return 0;
  }
}

struct Cursor {
  const uint8_t* data;
  size_t size;
  size_t pos = 0;

  void require(size_t n, const char* what) const {
    if (pos + n > size) {
      throw IngestError(std::string("mat: truncated ") + what);
    }
  }
  uint32_t u32() {
    require(4, "word");
    uint32_t v;
    std::memcpy(&v, data + pos, 4);
    pos += 4;
    return v;
  }
  void skip_pad8() { pos = (pos + 7) & ~size_t{7}; }
};

struct Element {
  uint32_t type = 0;
  const uint8_t* payload = nullptr;
  size_t size = 0;
};

// Reads one tagged element, handling the packed small-element form; leaves
// the cursor 8-byte aligned past the payload.
Element read_element(Cursor& c) {
  Element e;
  const uint32_t head = c.u32();
  if ((head & 0xFFFF0000u) != 0) {
    e.type = head & 0xFFFFu;
    e.size = head >> 16;
    c.require(4, "small element");
    e.payload = c.data + c.pos;
    c.pos += 4;
    return e;
  }
  e.type = head;
  e.size = c.u32();
  c.require(e.size, "element payload");
  e.payload = c.data + c.pos;
  c.pos += e.size;
  c.skip_pad8();
  return e;
}

MatVar parse_matrix(const Element& outer) {
  Cursor c{outer.payload, outer.size};
  const Element flags = read_element(c);
  if (flags.type != 6 /* miUINT32 pair */ || flags.size < 8) {
    throw IngestError("mat: malformed array flags");
  }
  uint32_t flag_word;
  std::memcpy(&flag_word, flags.payload, 4);
  if ((flag_word & 0x0800u) != 0) {
    throw IngestError("mat: complex arrays are not supported");
  }

  MatVar var;
  const Element dims = read_element(c);
  if (dims.type != kMiInt32 || dims.size % 4 != 0) {
    throw IngestError("mat: malformed dimensions");
  }
  for (size_t i = 0; i < dims.size / 4; ++i) {
    int32_t d;
    std::memcpy(&d, dims.payload + 4 * i, 4);
    var.dims.push_back(d);
  }

  const Element name = read_element(c);
  var.name.assign(reinterpret_cast<const char*>(name.payload), name.size);

  const Element real = read_element(c);
  const size_t elem_size = storage_size(real.type);
  if (elem_size == 0) {
    throw IngestError("mat: unsupported element type " +
                      std::to_string(real.type) + " for variable '" +
                      var.name + "'");
  }
  if (static_cast<int64_t>(real.size / elem_size) < var.element_count()) {
    throw IngestError("mat: data shorter than dimensions for variable '" +
                      var.name + "'");
  }
  var.storage_type = real.type;
  var.raw.assign(real.payload, real.payload + real.size);
  return var;
}

}  // namespace

double MatVar::value_at(int64_t i) const {
  const size_t esz = storage_size(storage_type);
  const uint8_t* p = raw.data() + static_cast<size_t>(i) * esz;
  switch (storage_type) {
    case kMiInt8: {
      int8_t v;
      std::memcpy(&v, p, 1);
      return v;
    }
    case kMiUint8:
      return *p;
    case kMiInt16: {
      int16_t v;
      std::memcpy(&v, p, 2);
      return v;
    }
    case kMiUint16: {
      uint16_t v;
      std::memcpy(&v, p, 2);
      return v;
    }
    case kMiInt32: {
      int32_t v;
      std::memcpy(&v, p, 4);
      return v;
    }
    case kMiUint32: {
      uint32_t v;
      std::memcpy(&v, p, 4);
      return v;
    }
    case kMiSingle: {
      float v;
      std::memcpy(&v, p, 4);
      return v;
    }
    case kMiDouble: {
      double v;
      std::memcpy(&v, p, 8);
      return v;
    }
    case kMiInt64: {
      int64_t v;
      std::memcpy(&v, p, 8);
      return static_cast<double>(v);
    }
    case kMiUint64: {
      uint64_t v;
      std::memcpy(&v, p, 8);
      return static_cast<double>(v);
    }
    default:
      throw IngestError("mat: unsupported element type");
  }
}

std::vector<MatVar> read_mat5(const std::string& path) {
  const std::vector<uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 128) {
    throw IngestError("mat: file too short: " + path);
  }
  if (!(bytes[126] == 'I' && bytes[127] == 'M')) {
    throw IngestError("mat: not a little-endian Level 5 file: " + path);
  }

  std::vector<MatVar> vars;
  Cursor c{bytes.data(), bytes.size(), 128};
  while (c.pos + 8 <= c.size) {
    const Element e = read_element(c);
    if (e.type == kMiCompressed) {
      const std::vector<uint8_t> inflated = inflate_bytes(e.payload, e.size);
      Cursor inner{inflated.data(), inflated.size()};
      const Element sub = read_element(inner);
      if (sub.type == kMiMatrix) {
        vars.push_back(parse_matrix(sub));
      }
    } else if (e.type == kMiMatrix) {
      vars.push_back(parse_matrix(e));
    }
    // Other top-level element kinds are skipped.
  }
  if (vars.empty()) {
    throw IngestError("mat: no numeric arrays found in " + path);
  }
  return vars;
}

const MatVar& find_mat_var(const std::vector<MatVar>& vars,
                           const std::string& name, const std::string& path) {
  for (const MatVar& var : vars) {
    if (var.name == name) return var;
  }
  throw IngestError("mat: variable '" + name + "' not found in " + path);
}

}  // namespace contsup
