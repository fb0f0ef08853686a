#include "gnv3/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace gnv3 {

namespace {
std::atomic<int> g_threads{1};
}

void set_num_threads(int n) {
  if (n <= 0) {
    n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
  }
  g_threads.store(n);
}

int num_threads() { return g_threads.load(); }

int chunk_count(int64_t count) {
  int t = num_threads();
  return static_cast<int>(std::min<int64_t>(t, std::max<int64_t>(count, 1)));
}

void parallel_for_chunks(
    int64_t count, const std::function<void(int, int64_t, int64_t)>& fn) {
  if (count <= 0) return;
  int chunks = chunk_count(count);
  if (chunks == 1) {
    fn(0, 0, count);
    return;
  }
  int64_t per = (count + chunks - 1) / chunks;
  std::vector<std::thread> workers;
  workers.reserve(chunks);
  for (int c = 0; c < chunks; ++c) {
    int64_t begin = c * per;
    int64_t end = std::min<int64_t>(begin + per, count);
    if (begin >= end) break;
    workers.emplace_back([&fn, c, begin, end] { fn(c, begin, end); });
  }
  for (auto& w : workers) w.join();
}

void parallel_for(int64_t count, const std::function<void(int64_t)>& fn) {
  parallel_for_chunks(count, [&fn](int, int64_t begin, int64_t end) {
    for (int64_t i = begin; i < end; ++i) fn(i);
  });
}

}  // namespace gnv3
