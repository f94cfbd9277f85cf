// SPDX-License-Identifier: Apache-2.0
#pragma once

// Little-endian encoding helpers for the on-disk formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "pecop/error.hpp"

namespace pecop::binary {

static_assert(std::endian::native == std::endian::little, "on-disk formats assume a little-endian host");

inline void put_u8(std::string& out, uint8_t v) { out.push_back(static_cast<char>(v)); }

template <typename U>
void put_le(std::string& out, U v) {
  char bytes[sizeof(U)];
  std::memcpy(bytes, &v, sizeof(U));
  out.append(bytes, sizeof(U));
}

inline void put_u32(std::string& out, uint32_t v) { put_le(out, v); }
inline void put_u64(std::string& out, uint64_t v) { put_le(out, v); }

inline void put_string(std::string& out, std::string_view s) {
  put_u32(out, static_cast<uint32_t>(s.size()));
  out.append(s);
}

/// Bounds-checked cursor over a byte buffer; truncation raises DataError.
class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(size_t n) {
    if (n > bytes_.size() - pos_) throw DataError("truncated input at byte " + std::to_string(pos_));
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  template <typename U>
  U le() {
    U v;
    std::memcpy(&v, take(sizeof(U)).data(), sizeof(U));
    return v;
  }
  uint8_t u8() { return le<uint8_t>(); }
  uint32_t u32() { return le<uint32_t>(); }
  uint64_t u64() { return le<uint64_t>(); }
  std::string string() { return std::string(take(u32())); }

  size_t position() const { return pos_; }
  size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace pecop::binary
