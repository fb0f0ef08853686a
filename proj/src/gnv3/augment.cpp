#include "gnv3/augment.hpp"

#include <algorithm>
#include <cmath>

#include "gnv3/common.hpp"
#include "gnv3/ops.hpp"

namespace gnv3 {

namespace {

constexpr int kTransformCount = 7;

void check_image(const Tensor& img) {
  GNV3_CHECK_SHAPE(img.n() == 1, "augmentations expect a single image");
}

float clamp01(float v) { return std::min(1.0f, std::max(0.0f, v)); }

void flip_h(Tensor& img) {
  const int64_t c = img.c(), h = img.h(), w = img.w();
  for (int64_t ic = 0; ic < c; ++ic)
    for (int64_t y = 0; y < h; ++y) {
      float* row = img.plane(0, ic) + y * w;
      std::reverse(row, row + w);
    }
}

void pad_crop(Tensor& img, std::mt19937_64& rng) {
  const int64_t pad = 4;
  const int64_t c = img.c(), h = img.h(), w = img.w();
  std::uniform_int_distribution<int64_t> dy(0, 2 * pad), dx(0, 2 * pad);
  const int64_t oy = dy(rng), ox = dx(rng);
  Tensor out(img.shape());
  for (int64_t ic = 0; ic < c; ++ic)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const int64_t sy = y + oy - pad, sx = x + ox - pad;
        out.at(0, ic, y, x) = (sy >= 0 && sy < h && sx >= 0 && sx < w)
                                  ? img.at(0, ic, sy, sx)
                                  : 0.0f;
      }
  img = std::move(out);
}

void rotate(Tensor& img, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> da(-15.0, 15.0);
  const double theta = da(rng) * M_PI / 180.0;
  const double ct = std::cos(theta), st = std::sin(theta);
  const int64_t c = img.c(), h = img.h(), w = img.w();
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  Tensor out(img.shape());
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const double sx = cx + (x - cx) * ct + (y - cy) * st;
      const double sy = cy - (x - cx) * st + (y - cy) * ct;
      const int64_t isx = std::llround(sx), isy = std::llround(sy);
      for (int64_t ic = 0; ic < c; ++ic)
        out.at(0, ic, y, x) = (isy >= 0 && isy < h && isx >= 0 && isx < w)
                                  ? img.at(0, ic, isy, isx)
                                  : 0.0f;
    }
  img = std::move(out);
}

void brightness(Tensor& img, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> dd(-0.2f, 0.2f);
  const float delta = dd(rng);
  for (auto& v : img.storage()) v = clamp01(v + delta);
}

void contrast(Tensor& img, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> df(0.7f, 1.3f);
  const float f = df(rng);
  double mean = 0.0;
  for (float v : img.storage()) mean += v;
  const float m = static_cast<float>(mean / img.numel());
  for (auto& v : img.storage()) v = clamp01(m + f * (v - m));
}

// Per-pixel mean across channels; shared by saturation and grayscale.
Tensor channel_mean(const Tensor& img) {
  const int64_t c = img.c(), h = img.h(), w = img.w();
  Tensor gray(1, 1, h, w);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      float s = 0.0f;
      for (int64_t ic = 0; ic < c; ++ic) s += img.at(0, ic, y, x);
      gray.at(0, 0, y, x) = s / static_cast<float>(c);
    }
  return gray;
}

void saturation(Tensor& img, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> df(0.5f, 1.5f);
  const float f = df(rng);
  Tensor gray = channel_mean(img);
  const int64_t c = img.c(), h = img.h(), w = img.w();
  for (int64_t ic = 0; ic < c; ++ic)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) {
        const float g = gray.at(0, 0, y, x);
        img.at(0, ic, y, x) = clamp01(g + f * (img.at(0, ic, y, x) - g));
      }
}

void grayscale(Tensor& img) {
  Tensor gray = channel_mean(img);
  const int64_t c = img.c(), h = img.h(), w = img.w();
  for (int64_t ic = 0; ic < c; ++ic)
    for (int64_t y = 0; y < h; ++y)
      for (int64_t x = 0; x < w; ++x) img.at(0, ic, y, x) = gray.at(0, 0, y, x);
}

}  // namespace

void AugmentConfig::validate() const {
  GNV3_CHECK_ARG(transforms_per_image >= 0 &&
                     transforms_per_image <= kTransformCount,
                 "transforms_per_image out of range");
  GNV3_CHECK_ARG(mixup_alpha > 0.0, "mixup alpha must be positive");
  GNV3_CHECK_ARG(erase_prob >= 0.0 && erase_prob <= 1.0,
                 "erase probability must lie in [0, 1]");
  GNV3_CHECK_ARG(erase_area_lo > 0.0 && erase_area_hi < 1.0 &&
                     erase_area_lo <= erase_area_hi,
                 "erase area range must lie inside (0, 1)");
  GNV3_CHECK_ARG(erase_aspect_lo > 0.0 && erase_aspect_hi >= erase_aspect_lo,
                 "erase aspect range out of order");
}

void apply_rand_transforms(Tensor& img, std::mt19937_64& rng, int count) {
  check_image(img);
  GNV3_CHECK_ARG(count >= 0 && count <= kTransformCount,
                 "transform count out of range");
  int idx[kTransformCount] = {0, 1, 2, 3, 4, 5, 6};
  // Partial Fisher-Yates: the first `count` entries are the chosen transforms.
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, kTransformCount - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  for (int i = 0; i < count; ++i) {
    switch (idx[i]) {
      case 0: flip_h(img); break;
      case 1: pad_crop(img, rng); break;
      case 2: rotate(img, rng); break;
      case 3: brightness(img, rng); break;
      case 4: contrast(img, rng); break;
      case 5: saturation(img, rng); break;
      case 6: grayscale(img); break;
    }
  }
}

void random_erasing(Tensor& img, std::mt19937_64& rng, const AugmentConfig& cfg) {
  check_image(img);
  cfg.validate();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  if (u01(rng) >= cfg.erase_prob) return;
  const int64_t c = img.c(), h = img.h(), w = img.w();
  std::uniform_real_distribution<double> da(cfg.erase_area_lo, cfg.erase_area_hi);
  std::uniform_real_distribution<double> dr(cfg.erase_aspect_lo,
                                            cfg.erase_aspect_hi);
  const double area = da(rng) * double(h) * double(w);
  const double aspect = dr(rng);
  int64_t eh = std::max<int64_t>(1, std::llround(std::sqrt(area * aspect)));
  int64_t ew = std::max<int64_t>(1, std::llround(std::sqrt(area / aspect)));
  eh = std::min(eh, h);
  ew = std::min(ew, w);
  std::uniform_int_distribution<int64_t> dy(0, h - eh), dx(0, w - ew);
  const int64_t y0 = dy(rng), x0 = dx(rng);
  std::uniform_real_distribution<float> noise(0.0f, 1.0f);
  for (int64_t ic = 0; ic < c; ++ic)
    for (int64_t y = y0; y < y0 + eh; ++y)
      for (int64_t x = x0; x < x0 + ew; ++x) img.at(0, ic, y, x) = noise(rng);
}

float sample_mixup_lambda(std::mt19937_64& rng, double alpha) {
  GNV3_CHECK_ARG(alpha > 0.0, "mixup alpha must be positive");
  std::gamma_distribution<double> g(alpha, 1.0);
  const double a = g(rng), b = g(rng);
  if (a + b == 0.0) return 0.5f;
  return static_cast<float>(a / (a + b));
}

Tensor mixup(const Tensor& a, const Tensor& b, float lambda) {
  check_image(a);
  GNV3_CHECK_SHAPE(a.shape() == b.shape(), "mixup image shape mismatch");
  GNV3_CHECK_ARG(lambda >= 0.0f && lambda <= 1.0f, "mixup lambda out of range");
  Tensor out(a.shape());
  const float* pa = a.data();
  const float* pb = b.data();
  float* po = out.data();
  for (int64_t i = 0; i < a.numel(); ++i)
    po[i] = lambda * pa[i] + (1.0f - lambda) * pb[i];
  return out;
}

CutmixResult cutmix(const Tensor& a, const Tensor& b, std::mt19937_64& rng) {
  check_image(a);
  GNV3_CHECK_SHAPE(a.shape() == b.shape(), "cutmix image shape mismatch");
  const int64_t c = a.c(), h = a.h(), w = a.w();
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double lambda = u01(rng);
  const double cut = std::sqrt(1.0 - lambda);
  const int64_t bh = std::llround(cut * h), bw = std::llround(cut * w);
  std::uniform_int_distribution<int64_t> dy(0, h - 1), dx(0, w - 1);
  const int64_t cy = dy(rng), cx = dx(rng);
  const int64_t y0 = std::max<int64_t>(0, cy - bh / 2);
  const int64_t y1 = std::min(h, cy - bh / 2 + bh);
  const int64_t x0 = std::max<int64_t>(0, cx - bw / 2);
  const int64_t x1 = std::min(w, cx - bw / 2 + bw);

  CutmixResult r;
  r.image = a;
  for (int64_t ic = 0; ic < c; ++ic)
    for (int64_t y = y0; y < y1; ++y)
      for (int64_t x = x0; x < x1; ++x)
        r.image.at(0, ic, y, x) = b.at(0, ic, y, x);
  const int64_t patch = std::max<int64_t>(0, y1 - y0) * std::max<int64_t>(0, x1 - x0);
  r.weight_a = 1.0f - static_cast<float>(double(patch) / double(h * w));
  return r;
}

}  // namespace gnv3
