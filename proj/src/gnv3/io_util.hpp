#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>
#include <vector>

#include "gnv3/common.hpp"

namespace gnv3::io {

// All file formats are little-endian regardless of host byte order.

inline void write_bytes(std::ostream& out, const void* p, size_t n) {
  out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  GNV3_CHECK_IO(out.good(), "write failed");
}

inline void read_bytes(std::istream& in, void* p, size_t n) {
  in.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  GNV3_CHECK_IO(in.gcount() == static_cast<std::streamsize>(n),
                "unexpected end of file");
}

template <typename T>
void write_le(std::ostream& out, T v) {
  static_assert(std::is_integral_v<T>);
  uint8_t buf[sizeof(T)];
  using U = std::make_unsigned_t<T>;
  U u = static_cast<U>(v);
  for (size_t i = 0; i < sizeof(T); ++i) buf[i] = uint8_t(u >> (8 * i));
  write_bytes(out, buf, sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  static_assert(std::is_integral_v<T>);
  uint8_t buf[sizeof(T)];
  read_bytes(in, buf, sizeof(T));
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (size_t i = 0; i < sizeof(T); ++i) u |= U(buf[i]) << (8 * i);
  return static_cast<T>(u);
}

inline void write_f32(std::ostream& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_le<uint32_t>(out, bits);
}

inline float read_f32(std::istream& in) {
  const uint32_t bits = read_le<uint32_t>(in);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

inline void write_f32_array(std::ostream& out, const float* v, size_t n) {
  for (size_t i = 0; i < n; ++i) write_f32(out, v[i]);
}

inline void read_f32_array(std::istream& in, float* v, size_t n) {
  for (size_t i = 0; i < n; ++i) v[i] = read_f32(in);
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_le<uint32_t>(out, static_cast<uint32_t>(s.size()));
  write_bytes(out, s.data(), s.size());
}

inline std::string read_string(std::istream& in, uint32_t max_len = 1u << 20) {
  const uint32_t len = read_le<uint32_t>(in);
  GNV3_CHECK(len <= max_len, ErrorCode::bad_format, "string field too long");
  std::string s(len, '\0');
  if (len > 0) read_bytes(in, s.data(), len);
  return s;
}

inline void expect_magic(std::istream& in, const char magic[4],
                         const std::string& what) {
  char buf[4];
  read_bytes(in, buf, 4);
  GNV3_CHECK(std::memcmp(buf, magic, 4) == 0, ErrorCode::bad_format,
             "bad magic: not a " + what + " file");
}

// FNV-1a, 64-bit. Stable fingerprint for config text.
inline uint64_t fnv1a64(const void* data, size_t n) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace gnv3::io
