#pragma once

#include <cstddef>
#include <functional>

namespace thzleaf {

/// Worker cap for every parallel loop in the library. 0 means hardware concurrency.
void set_thread_count(unsigned n);
unsigned thread_count();

/// Runs body(i) for i in [0, n). Work is split into contiguous static chunks, so
/// results that are written per index and reduced afterwards in index order do
/// not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace thzleaf
