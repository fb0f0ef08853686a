#pragma once

#include <string>
#include <vector>

#include "gnv3/tensor.hpp"

namespace gnv3 {

// In-memory image classification dataset; u8 pixels, one u16 label each.
// On disk: magic "GDS1", u32 version, u64 count, u32 channels/height/width/
// classes, per-channel f32 mean and std, then count * (pixels, label).
struct Dataset {
  int64_t channels = 3, height = 0, width = 0, classes = 0;
  Vec mean, stdev;  // per channel, computed over the whole set at build time
  std::vector<uint8_t> pixels;
  std::vector<uint16_t> labels;

  int64_t count() const { return static_cast<int64_t>(labels.size()); }
  int64_t sample_bytes() const { return channels * height * width; }
  void validate() const;

  // One image as float in [0, 1], shape (1, c, h, w).
  Tensor image(int64_t i) const;
  int label(int64_t i) const;
  // (x - mean) / std per channel; accepts any batch size.
  Tensor normalize(const Tensor& img01) const;
};

Dataset load_dataset(const std::string& path);
void save_dataset(const Dataset& d, const std::string& path);

// Synthetic oriented-grating benchmark: class k is a sinusoidal pattern at
// angle k*pi/classes with class-specific frequency, plus per-sample phase,
// frequency/amplitude jitter and additive noise. `label_noise` relabels that
// fraction of samples uniformly at random (train-split regularization knob).
Dataset synth_dataset(int64_t classes, int64_t per_class, int64_t height,
                      int64_t width, uint64_t seed, double noise_sigma = 0.25,
                      double label_noise = 0.0);

// Builds a dataset from a directory of per-class subdirectories of binary
// PPM (P6) / PGM (P5) images, ordered lexicographically; images are resized
// (nearest) so the short side matches, then center-cropped.
Dataset ingest_images(const std::string& dir, int64_t height, int64_t width);

// Teacher logits, row-aligned with a dataset. On disk: magic "GTL1",
// u32 version, u64 count, u32 classes, row-major f32.
struct LogitTable {
  int64_t classes = 0;
  std::vector<float> rows;  // count * classes

  int64_t count() const {
    return classes == 0 ? 0 : static_cast<int64_t>(rows.size()) / classes;
  }
  const float* row(int64_t i) const { return rows.data() + i * classes; }
};

LogitTable load_logits(const std::string& path);
void save_logits(const LogitTable& t, const std::string& path);

}  // namespace gnv3
