#pragma once

#include <random>

#include "gnv3/tensor.hpp"

namespace gnv3 {

struct AugmentConfig {
  bool rand_transforms = true;
  int transforms_per_image = 2;
  bool mixup = false;
  double mixup_alpha = 0.8;  // Beta(alpha, alpha) mixing weight
  bool cutmix = false;
  bool erasing = true;
  double erase_prob = 0.25;
  double erase_area_lo = 0.02, erase_area_hi = 0.2;
  double erase_aspect_lo = 0.3, erase_aspect_hi = 10.0 / 3.0;

  void validate() const;
};

// All routines operate on one image (1, c, h, w) with values in [0, 1].

// Applies `count` distinct transforms drawn uniformly from the fixed pool:
// horizontal flip, pad-and-crop, rotate (up to +/-15 deg), brightness,
// contrast, saturation, grayscale.
void apply_rand_transforms(Tensor& img, std::mt19937_64& rng, int count);

// Overwrites one random rectangle with uniform noise (probability
// cfg.erase_prob; area and aspect ranges from cfg).
void random_erasing(Tensor& img, std::mt19937_64& rng, const AugmentConfig& cfg);

float sample_mixup_lambda(std::mt19937_64& rng, double alpha);

// lambda * a + (1 - lambda) * b; label weights are (lambda, 1 - lambda).
Tensor mixup(const Tensor& a, const Tensor& b, float lambda);

struct CutmixResult {
  Tensor image;
  float weight_a = 1.0f;  // surviving-area fraction of image a; b gets the rest
};
// Pastes a random rectangle of b into a. The label weight is computed from
// the clipped integer pixel area, so weight_a + weight_b == 1 exactly.
CutmixResult cutmix(const Tensor& a, const Tensor& b, std::mt19937_64& rng);

}  // namespace gnv3
