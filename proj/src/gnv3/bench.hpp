#pragma once

#include "gnv3/ghostnet.hpp"

namespace gnv3 {

struct BenchResult {
  int64_t runs = 0, warmup = 0;
  double median_ms = 0.0, p10_ms = 0.0, p90_ms = 0.0, mean_ms = 0.0;
  int64_t params = 0, flops = 0;
};

// Single-threaded latency of one inference on a random (1, c, h, w) input:
// `warmup` unmeasured iterations, then `runs` measured ones.
BenchResult bench_model(Model& m, int64_t h, int64_t w, int64_t runs = 100,
                        int64_t warmup = 10, uint64_t seed = 0);

// Max relative output difference between two models over n random inputs
// (relative to the per-input magnitude of the first model's output).
double compare_models(const Model& a, const Model& b, int64_t n_inputs,
                      int64_t h, int64_t w, uint64_t seed);

}  // namespace gnv3
