#include "gnv3/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "gnv3/common.hpp"
#include "gnv3/io_util.hpp"

namespace gnv3 {

namespace fs = std::filesystem;

void Dataset::validate() const {
  GNV3_CHECK_ARG(channels >= 1 && height >= 1 && width >= 1,
                 "dataset dimensions must be positive");
  GNV3_CHECK_ARG(classes >= 2, "dataset needs at least two classes");
  GNV3_CHECK(static_cast<int64_t>(mean.size()) == channels &&
                 static_cast<int64_t>(stdev.size()) == channels,
             ErrorCode::bad_format, "normalization stats do not match channels");
  GNV3_CHECK(static_cast<int64_t>(pixels.size()) == count() * sample_bytes(),
             ErrorCode::bad_format, "pixel payload does not match header");
  for (uint16_t l : labels)
    GNV3_CHECK(l < classes, ErrorCode::bad_format, "label out of range");
  for (float s : stdev)
    GNV3_CHECK(s > 0.0f, ErrorCode::bad_format, "non-positive channel std");
}

Tensor Dataset::image(int64_t i) const {
  GNV3_CHECK_ARG(i >= 0 && i < count(), "sample index out of range");
  Tensor t(1, channels, height, width);
  const uint8_t* src = pixels.data() + i * sample_bytes();
  float* dst = t.data();
  for (int64_t j = 0; j < sample_bytes(); ++j)
    dst[j] = static_cast<float>(src[j]) / 255.0f;
  return t;
}

int Dataset::label(int64_t i) const {
  GNV3_CHECK_ARG(i >= 0 && i < count(), "sample index out of range");
  return labels[static_cast<size_t>(i)];
}

Tensor Dataset::normalize(const Tensor& img01) const {
  GNV3_CHECK_SHAPE(img01.c() == channels, "channel mismatch in normalize");
  Tensor out(img01.shape());
  const int64_t plane = img01.h() * img01.w();
  for (int64_t n = 0; n < img01.n(); ++n)
    for (int64_t c = 0; c < channels; ++c) {
      const float* src = img01.plane(n, c);
      float* dst = out.plane(n, c);
      const float m = mean[c], inv = 1.0f / stdev[c];
      for (int64_t j = 0; j < plane; ++j) dst[j] = (src[j] - m) * inv;
    }
  return out;
}

namespace {

constexpr char kDatasetMagic[4] = {'G', 'D', 'S', '1'};
constexpr char kLogitMagic[4] = {'G', 'T', 'L', '1'};

void compute_stats(Dataset& d) {
  d.mean.assign(d.channels, 0.0f);
  d.stdev.assign(d.channels, 1.0f);
  if (d.count() == 0) return;
  const int64_t plane = d.height * d.width;
  std::vector<double> sum(d.channels, 0.0), sq(d.channels, 0.0);
  for (int64_t i = 0; i < d.count(); ++i) {
    const uint8_t* p = d.pixels.data() + i * d.sample_bytes();
    for (int64_t c = 0; c < d.channels; ++c)
      for (int64_t j = 0; j < plane; ++j) {
        const double v = double(p[c * plane + j]) / 255.0;
        sum[c] += v;
        sq[c] += v * v;
      }
  }
  const double n = double(d.count()) * plane;
  for (int64_t c = 0; c < d.channels; ++c) {
    const double m = sum[c] / n;
    const double var = std::max(1e-8, sq[c] / n - m * m);
    d.mean[c] = static_cast<float>(m);
    d.stdev[c] = static_cast<float>(std::sqrt(var));
  }
}

}  // namespace

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  GNV3_CHECK_IO(in.good(), "cannot open dataset: " + path);
  io::expect_magic(in, kDatasetMagic, "dataset");
  const uint32_t version = io::read_le<uint32_t>(in);
  GNV3_CHECK(version == 1, ErrorCode::bad_format,
             "unsupported dataset version " + std::to_string(version));
  Dataset d;
  const uint64_t count = io::read_le<uint64_t>(in);
  d.channels = io::read_le<uint32_t>(in);
  d.height = io::read_le<uint32_t>(in);
  d.width = io::read_le<uint32_t>(in);
  d.classes = io::read_le<uint32_t>(in);
  GNV3_CHECK(count <= (1ULL << 32), ErrorCode::bad_format,
             "implausible dataset sample count");
  d.mean.resize(d.channels);
  d.stdev.resize(d.channels);
  io::read_f32_array(in, d.mean.data(), d.mean.size());
  io::read_f32_array(in, d.stdev.data(), d.stdev.size());
  d.labels.resize(count);
  d.pixels.resize(count * d.sample_bytes());
  for (uint64_t i = 0; i < count; ++i) {
    io::read_bytes(in, d.pixels.data() + i * d.sample_bytes(), d.sample_bytes());
    d.labels[i] = io::read_le<uint16_t>(in);
  }
  d.validate();
  return d;
}

void save_dataset(const Dataset& d, const std::string& path) {
  d.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  GNV3_CHECK_IO(out.good(), "cannot create dataset: " + path);
  io::write_bytes(out, kDatasetMagic, 4);
  io::write_le<uint32_t>(out, 1);
  io::write_le<uint64_t>(out, d.count());
  io::write_le<uint32_t>(out, static_cast<uint32_t>(d.channels));
  io::write_le<uint32_t>(out, static_cast<uint32_t>(d.height));
  io::write_le<uint32_t>(out, static_cast<uint32_t>(d.width));
  io::write_le<uint32_t>(out, static_cast<uint32_t>(d.classes));
  io::write_f32_array(out, d.mean.data(), d.mean.size());
  io::write_f32_array(out, d.stdev.data(), d.stdev.size());
  for (int64_t i = 0; i < d.count(); ++i) {
    io::write_bytes(out, d.pixels.data() + i * d.sample_bytes(), d.sample_bytes());
    io::write_le<uint16_t>(out, d.labels[i]);
  }
  out.flush();
  GNV3_CHECK_IO(out.good(), "write failed: " + path);
}

Dataset synth_dataset(int64_t classes, int64_t per_class, int64_t height,
                      int64_t width, uint64_t seed, double noise_sigma,
                      double label_noise) {
  GNV3_CHECK_ARG(classes >= 2 && classes <= 65535, "class count out of range");
  GNV3_CHECK_ARG(per_class >= 1, "per_class must be positive");
  GNV3_CHECK_ARG(height >= 4 && width >= 4, "synthetic images must be >= 4x4");
  GNV3_CHECK_ARG(label_noise >= 0.0 && label_noise < 1.0,
                 "label_noise must lie in [0, 1)");

  Dataset d;
  d.channels = 3;
  d.height = height;
  d.width = width;
  d.classes = classes;
  const int64_t n = classes * per_class;
  d.labels.resize(n);
  d.pixels.resize(n * d.sample_bytes());

  std::mt19937_64 rng(mix_seed(seed, 0x647331ULL));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int64_t plane = height * width;

  for (int64_t i = 0; i < n; ++i) {
    const int64_t cls = i % classes;
    d.labels[i] = static_cast<uint16_t>(cls);
    // The class signal is the radial frequency of concentric rings, so
    // flips, rotations and small crops preserve the label.
    const double base_freq =
        0.08 + 0.34 * double(cls) / double(std::max<int64_t>(1, classes - 1));
    const double freq = base_freq * (1.0 + 0.03 * (2.0 * u01(rng) - 1.0));
    const double phase = 2.0 * M_PI * u01(rng);
    const double amp = 0.30 + 0.15 * u01(rng);
    const double offset = 0.35 + 0.30 * u01(rng);
    const double cx = 0.5 * double(width - 1) + 0.1 * width * (2.0 * u01(rng) - 1.0);
    const double cy = 0.5 * double(height - 1) + 0.1 * height * (2.0 * u01(rng) - 1.0);
    // Mild per-sample tint, independent of class, so color carries no signal.
    double tint[3] = {0.9 + 0.2 * u01(rng), 0.9 + 0.2 * u01(rng),
                      0.9 + 0.2 * u01(rng)};
    uint8_t* px = d.pixels.data() + i * d.sample_bytes();
    for (int64_t y = 0; y < height; ++y)
      for (int64_t x = 0; x < width; ++x) {
        const double r = std::hypot(double(x) - cx, double(y) - cy);
        const double s = offset + amp * std::sin(2.0 * M_PI * freq * r + phase) +
                         noise_sigma * gauss(rng);
        for (int64_t c = 0; c < 3; ++c) {
          const double v = std::clamp(s * tint[c], 0.0, 1.0);
          px[c * plane + y * width + x] = static_cast<uint8_t>(v * 255.0 + 0.5);
        }
      }
  }

  if (label_noise > 0.0) {
    std::uniform_int_distribution<int64_t> dl(0, classes - 1);
    for (int64_t i = 0; i < n; ++i)
      if (u01(rng) < label_noise) d.labels[i] = static_cast<uint16_t>(dl(rng));
  }

  compute_stats(d);
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// PPM/PGM ingestion
// ---------------------------------------------------------------------------

namespace {

struct RawImage {
  int64_t channels = 0, height = 0, width = 0;
  std::vector<uint8_t> pixels;  // interleaved (h, w, c) as stored in PPM
};

int read_pnm_token(std::istream& in) {
  // Skips whitespace and '#' comments, then reads one unsigned integer.
  while (true) {
    int ch = in.peek();
    GNV3_CHECK(ch != EOF, ErrorCode::bad_format, "truncated PNM header");
    if (std::isspace(ch)) {
      in.get();
      continue;
    }
    if (ch == '#') {
      std::string line;
      std::getline(in, line);
      continue;
    }
    break;
  }
  int value = 0;
  bool any = false;
  while (std::isdigit(in.peek())) {
    value = value * 10 + (in.get() - '0');
    any = true;
    GNV3_CHECK(value <= 1 << 24, ErrorCode::bad_format, "PNM value overflow");
  }
  GNV3_CHECK(any, ErrorCode::bad_format, "malformed PNM header");
  return value;
}

RawImage load_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  GNV3_CHECK_IO(in.good(), "cannot open image: " + path);
  char p, kind;
  in.get(p);
  in.get(kind);
  GNV3_CHECK(p == 'P' && (kind == '5' || kind == '6'), ErrorCode::bad_format,
             path + ": only binary PGM (P5) and PPM (P6) are supported");
  RawImage img;
  img.channels = (kind == '6') ? 3 : 1;
  img.width = read_pnm_token(in);
  img.height = read_pnm_token(in);
  const int maxval = read_pnm_token(in);
  GNV3_CHECK(maxval == 255, ErrorCode::bad_format,
             path + ": only 8-bit PNM images are supported");
  in.get();  // single whitespace after maxval
  img.pixels.resize(img.channels * img.height * img.width);
  io::read_bytes(in, img.pixels.data(), img.pixels.size());
  return img;
}

// Nearest-neighbour resize of interleaved u8, then center-crop.
std::vector<uint8_t> resize_center_crop(const RawImage& img, int64_t out_c,
                                        int64_t out_h, int64_t out_w) {
  // Scale so the short side matches, preserving aspect ratio.
  const double scale = std::max(double(out_h) / img.height,
                                double(out_w) / img.width);
  const int64_t rh = std::max<int64_t>(out_h, std::llround(img.height * scale));
  const int64_t rw = std::max<int64_t>(out_w, std::llround(img.width * scale));
  const int64_t y_off = (rh - out_h) / 2, x_off = (rw - out_w) / 2;

  std::vector<uint8_t> out(out_c * out_h * out_w);
  const int64_t plane = out_h * out_w;
  for (int64_t y = 0; y < out_h; ++y)
    for (int64_t x = 0; x < out_w; ++x) {
      const int64_t ry = y + y_off, rx = x + x_off;
      int64_t sy = ry * img.height / rh, sx = rx * img.width / rw;
      sy = std::min(sy, img.height - 1);
      sx = std::min(sx, img.width - 1);
      const uint8_t* src = img.pixels.data() +
                           (sy * img.width + sx) * img.channels;
      for (int64_t c = 0; c < out_c; ++c) {
        // Grayscale sources broadcast across the RGB target channels.
        const uint8_t v = src[std::min<int64_t>(c, img.channels - 1)];
        out[c * plane + y * out_w + x] = v;
      }
    }
  return out;
}

}  // namespace

Dataset ingest_images(const std::string& dir, int64_t height, int64_t width) {
  GNV3_CHECK_ARG(height >= 1 && width >= 1, "target size must be positive");
  GNV3_CHECK_IO(fs::is_directory(dir), "not a directory: " + dir);

  std::vector<std::string> class_dirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) class_dirs.push_back(e.path().filename().string());
  std::sort(class_dirs.begin(), class_dirs.end());
  GNV3_CHECK(!class_dirs.empty(), ErrorCode::io_error,
             "no class subdirectories in " + dir);
  GNV3_CHECK(class_dirs.size() >= 2, ErrorCode::invalid_argument,
             "need at least two class subdirectories");

  Dataset d;
  d.channels = 3;
  d.height = height;
  d.width = width;
  d.classes = static_cast<int64_t>(class_dirs.size());

  for (size_t cls = 0; cls < class_dirs.size(); ++cls) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(fs::path(dir) / class_dirs[cls]))
      if (e.is_regular_file()) files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      RawImage img = load_pnm(f);
      std::vector<uint8_t> planar = resize_center_crop(img, d.channels, height, width);
      d.pixels.insert(d.pixels.end(), planar.begin(), planar.end());
      d.labels.push_back(static_cast<uint16_t>(cls));
    }
  }
  GNV3_CHECK(!d.labels.empty(), ErrorCode::io_error,
             "no images found under " + dir);
  compute_stats(d);
  d.validate();
  return d;
}

// ---------------------------------------------------------------------------
// Teacher logits
// ---------------------------------------------------------------------------

LogitTable load_logits(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  GNV3_CHECK_IO(in.good(), "cannot open logit file: " + path);
  io::expect_magic(in, kLogitMagic, "teacher-logit");
  const uint32_t version = io::read_le<uint32_t>(in);
  GNV3_CHECK(version == 1, ErrorCode::bad_format,
             "unsupported logit file version " + std::to_string(version));
  const uint64_t count = io::read_le<uint64_t>(in);
  LogitTable t;
  t.classes = io::read_le<uint32_t>(in);
  GNV3_CHECK(t.classes >= 2, ErrorCode::bad_format, "logit file class count < 2");
  t.rows.resize(count * t.classes);
  io::read_f32_array(in, t.rows.data(), t.rows.size());
  return t;
}

void save_logits(const LogitTable& t, const std::string& path) {
  GNV3_CHECK_ARG(t.classes >= 2, "logit table class count < 2");
  GNV3_CHECK_ARG(t.rows.size() % t.classes == 0, "ragged logit table");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  GNV3_CHECK_IO(out.good(), "cannot create logit file: " + path);
  io::write_bytes(out, kLogitMagic, 4);
  io::write_le<uint32_t>(out, 1);
  io::write_le<uint64_t>(out, t.count());
  io::write_le<uint32_t>(out, static_cast<uint32_t>(t.classes));
  io::write_f32_array(out, t.rows.data(), t.rows.size());
  out.flush();
  GNV3_CHECK_IO(out.good(), "write failed: " + path);
}

}  // namespace gnv3
