#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace gnv3 {

enum class ErrorCode : int32_t {
  ok = 0,
  invalid_argument = 1,
  shape_mismatch = 2,
  io_error = 3,
  bad_format = 4,
  numeric_error = 5,
  internal = 6,
};

// Error thrown by the core; the C API layer maps `code` onto gnv3_status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, msg);
}

#define GNV3_CHECK(cond, code, msg)                             \
  do {                                                          \
    if (!(cond)) {                                              \
      std::ostringstream oss_;                                  \
      oss_ << msg;                                              \
      ::gnv3::fail((code), oss_.str());                         \
    }                                                           \
  } while (0)

#define GNV3_CHECK_ARG(cond, msg) \
  GNV3_CHECK(cond, ::gnv3::ErrorCode::invalid_argument, msg)
#define GNV3_CHECK_SHAPE(cond, msg) \
  GNV3_CHECK(cond, ::gnv3::ErrorCode::shape_mismatch, msg)
#define GNV3_CHECK_IO(cond, msg) \
  GNV3_CHECK(cond, ::gnv3::ErrorCode::io_error, msg)

// Splitmix64. Used to derive independent RNG streams from one master seed.
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
  uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace gnv3
