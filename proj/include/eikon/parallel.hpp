#pragma once

#include <cstddef>
#include <exception>
#include <functional>

namespace eikon {

/// Worker count from EIKON_THREADS, else the hardware concurrency (at least 1).
int thread_count();

/// Runs body(i) for i in [0, n) over contiguous static chunks. The first exception
/// thrown by any chunk (in chunk order) is rethrown on the calling thread.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace eikon
