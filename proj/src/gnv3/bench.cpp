#include "gnv3/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "gnv3/common.hpp"
#include "gnv3/parallel.hpp"

namespace gnv3 {

namespace {

double percentile(std::vector<double> sorted, double p) {
  const size_t n = sorted.size();
  const size_t idx = static_cast<size_t>(std::llround(p / 100.0 * double(n - 1)));
  return sorted[std::min(idx, n - 1)];
}

}  // namespace

BenchResult bench_model(Model& m, int64_t h, int64_t w, int64_t runs,
                        int64_t warmup, uint64_t seed) {
  GNV3_CHECK_ARG(runs >= 1, "bench needs at least one run");
  GNV3_CHECK_ARG(warmup >= 0, "warmup must be non-negative");

  // Timing is only meaningful serial; restore the previous setting after.
  const int prev_threads = num_threads();
  set_num_threads(1);

  std::mt19937_64 rng(mix_seed(seed, 0xBE7CFULL));
  Tensor x = Tensor::randn(Shape4{1, m.spec.in_channels, h, w}, rng);

  for (int64_t i = 0; i < warmup; ++i) (void)m.forward(x);

  std::vector<double> ms(runs);
  for (int64_t i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    (void)m.forward(x);
    const auto t1 = std::chrono::steady_clock::now();
    ms[i] = std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  set_num_threads(prev_threads);

  std::vector<double> sorted = ms;
  std::sort(sorted.begin(), sorted.end());
  BenchResult r;
  r.runs = runs;
  r.warmup = warmup;
  r.median_ms = percentile(sorted, 50.0);
  r.p10_ms = percentile(sorted, 10.0);
  r.p90_ms = percentile(sorted, 90.0);
  double sum = 0.0;
  for (double v : ms) sum += v;
  r.mean_ms = sum / double(runs);
  r.params = count_params(m);
  r.flops = count_flops(m, h, w);
  return r;
}

double compare_models(const Model& a, const Model& b, int64_t n_inputs,
                      int64_t h, int64_t w, uint64_t seed) {
  GNV3_CHECK_ARG(n_inputs >= 1, "need at least one comparison input");
  GNV3_CHECK_ARG(a.spec.in_channels == b.spec.in_channels &&
                     a.spec.num_classes == b.spec.num_classes,
                 "models are not comparable");
  double worst = 0.0;
  for (int64_t i = 0; i < n_inputs; ++i) {
    std::mt19937_64 rng(mix_seed(seed, 0xC0817ULL + i));
    Tensor x = Tensor::randn(Shape4{1, a.spec.in_channels, h, w}, rng);
    Tensor ya = a.forward(x);
    Tensor yb = b.forward(x);
    double max_abs = 0.0, max_diff = 0.0;
    for (int64_t j = 0; j < ya.numel(); ++j) {
      max_abs = std::max(max_abs, double(std::fabs(ya.data()[j])));
      max_diff = std::max(
          max_diff, double(std::fabs(ya.data()[j] - yb.data()[j])));
    }
    worst = std::max(worst, max_diff / std::max(max_abs, 1e-12));
  }
  return worst;
}

}  // namespace gnv3
