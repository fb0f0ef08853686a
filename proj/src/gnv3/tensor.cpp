#include "gnv3/tensor.hpp"

#include <cmath>
#include <sstream>

namespace gnv3 {

std::string Shape4::str() const {
  std::ostringstream oss;
  oss << "(" << n << "," << c << "," << h << "," << w << ")";
  return oss.str();
}

Tensor::Tensor(const Shape4& s) : shape_(s) {
  GNV3_CHECK_ARG(s.n >= 1 && s.c >= 1 && s.h >= 1 && s.w >= 1,
                 "tensor dims must all be >= 1, got " << s.str());
  data_.assign(static_cast<size_t>(s.numel()), 0.0f);
}

Tensor Tensor::full(const Shape4& s, float v) {
  Tensor t(s);
  t.fill(v);
  return t;
}

Tensor Tensor::randn(const Shape4& s, std::mt19937_64& rng, float stddev) {
  Tensor t(s);
  std::normal_distribution<float> dist(0.0f, stddev);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

Tensor Tensor::uniform(const Shape4& s, std::mt19937_64& rng, float lo, float hi) {
  Tensor t(s);
  std::uniform_real_distribution<float> dist(lo, hi);
  for (auto& v : t.data_) v = dist(rng);
  return t;
}

void Tensor::fill(float v) {
  for (auto& x : data_) x = v;
}

void Tensor::check_finite(const char* what) const {
  for (float v : data_) {
    if (!std::isfinite(v)) {
      fail(ErrorCode::numeric_error,
           std::string(what) + " produced a non-finite value");
    }
  }
}

}  // namespace gnv3
