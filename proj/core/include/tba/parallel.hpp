#pragma once

#include <cstddef>
#include <functional>

namespace tba {

// Worker count: TBA_THREADS if set to a positive integer, else the hardware
// concurrency (at least 1).
std::size_t thread_count();

// Runs fn(i) for every i in [0, n), split into contiguous chunks across up to
// thread_count() threads. Callers write results by index so the outcome does
// not depend on scheduling. Exceptions from workers are rethrown (first one
// by chunk order).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace tba
