#pragma once

#include <cstddef>
#include <functional>

namespace steerkit {

/// Worker cap used by parallel_for; 0 means hardware concurrency.
void set_max_threads(std::size_t n);
std::size_t max_threads();

/// Runs fn(i) for i in [0, n) over contiguous chunks. Each index is visited by
/// exactly one worker, so writes into per-index slots need no locking and the
/// result does not depend on the thread count. The first exception thrown by
/// any worker is rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace steerkit
