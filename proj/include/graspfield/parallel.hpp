#pragma once

#include <cstddef>
#include <functional>

namespace graspfield {

/// Worker count: GRASPFIELD_THREADS if set (>= 1), else hardware concurrency.
std::size_t thread_count();

/// Runs fn(i) for i in [0, n). Each index is processed exactly once; callers
/// write results into per-index slots and reduce afterwards in index order,
/// which keeps outputs independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace graspfield
