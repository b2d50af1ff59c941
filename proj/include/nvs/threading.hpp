#pragma once

#include <cstddef>
#include <functional>

namespace nvs {

// Global worker count for data-parallel kernels. Work is always partitioned
// by output row, so every element is reduced in a fixed serial order and
// results are bit-identical for any thread count.
void set_thread_count(int n);
int thread_count();

// Runs fn(begin, end) over disjoint chunks of [0, n). Runs inline when the
// range is small or only one worker is configured.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace nvs
