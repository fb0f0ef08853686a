#pragma once

#include <cstdint>
#include <functional>

namespace gnv3 {

// Process-wide worker count for parallel_for. 1 = fully serial.
void set_num_threads(int n);
int num_threads();

// Runs fn(i) for i in [0, count). Work is split into contiguous chunks,
// one per worker. Callers must only write to disjoint locations per index;
// under that contract results are bitwise identical for any thread count.
void parallel_for(int64_t count, const std::function<void(int64_t)>& fn);

// Chunked variant: fn(begin, end) per contiguous range. chunk_count() tells
// callers how many partial buffers to allocate when they reduce afterwards
// (reduction order over chunks is ascending, so results are deterministic
// for a fixed thread count).
int chunk_count(int64_t count);
void parallel_for_chunks(
    int64_t count, const std::function<void(int chunk, int64_t begin, int64_t end)>& fn);

}  // namespace gnv3
