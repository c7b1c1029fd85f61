#pragma once

#include <cstddef>
#include <functional>

namespace starksim {

// Worker cap from STARKSIM_THREADS, else the hardware concurrency (>= 1).
unsigned default_workers();

// Runs body(i) for i in [0, n) on up to `workers` threads (0 = default).
// Exceptions from the body are rethrown on the calling thread; when several
// indices throw, the one with the lowest index wins.
void parallel_for(std::size_t n, unsigned workers, const std::function<void(std::size_t)>& body);

} // namespace starksim
