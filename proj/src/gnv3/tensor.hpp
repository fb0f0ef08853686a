#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "gnv3/common.hpp"

namespace gnv3 {

struct Shape4 {
  int64_t n = 1, c = 1, h = 1, w = 1;

  int64_t numel() const { return n * c * h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

// Dense rank-4 NCHW tensor of f32, row-major with w fastest.
class Tensor {
 public:
  Tensor() = default;
  Tensor(int64_t n, int64_t c, int64_t h, int64_t w) : Tensor(Shape4{n, c, h, w}) {}
  explicit Tensor(const Shape4& s);

  static Tensor zeros(const Shape4& s) { return Tensor(s); }
  static Tensor full(const Shape4& s, float v);
  // i.i.d. samples; used by tests and weight init.
  static Tensor randn(const Shape4& s, std::mt19937_64& rng, float stddev = 1.0f);
  static Tensor uniform(const Shape4& s, std::mt19937_64& rng, float lo, float hi);

  const Shape4& shape() const { return shape_; }
  int64_t n() const { return shape_.n; }
  int64_t c() const { return shape_.c; }
  int64_t h() const { return shape_.h; }
  int64_t w() const { return shape_.w; }
  int64_t numel() const { return shape_.numel(); }
  bool empty() const { return data_.empty(); }

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }

  float& at(int64_t in, int64_t ic, int64_t iy, int64_t ix) {
    return data_[((in * shape_.c + ic) * shape_.h + iy) * shape_.w + ix];
  }
  float at(int64_t in, int64_t ic, int64_t iy, int64_t ix) const {
    return data_[((in * shape_.c + ic) * shape_.h + iy) * shape_.w + ix];
  }

  // Pointer to the start of one (n, c) plane.
  float* plane(int64_t in, int64_t ic) {
    return data_.data() + (in * shape_.c + ic) * shape_.h * shape_.w;
  }
  const float* plane(int64_t in, int64_t ic) const {
    return data_.data() + (in * shape_.c + ic) * shape_.h * shape_.w;
  }

  void fill(float v);
  // Throws numeric_error if any element is NaN or Inf. `what` names the
  // producing operation in the message.
  void check_finite(const char* what) const;

  std::vector<float>& storage() { return data_; }
  const std::vector<float>& storage() const { return data_; }

 private:
  Shape4 shape_;
  std::vector<float> data_;
};

// Flat parameter vector (bias, BN statistics, ...).
using Vec = std::vector<float>;

}  // namespace gnv3
