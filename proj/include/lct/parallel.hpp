#pragma once

#include <cstddef>
#include <functional>

namespace lct {

// Worker cap for kernels that split over an outer axis. Defaults to the
// hardware concurrency; the CLI applies LCT_THREADS.
void set_max_threads(std::size_t n);
std::size_t max_threads();

// Runs fn(begin, end) over a fixed contiguous partition of [0, n). Each index
// is owned by exactly one chunk, so results do not depend on the thread count
// as long as fn writes only to per-index outputs.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace lct
