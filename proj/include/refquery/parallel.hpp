#pragma once

#include <cstddef>
#include <functional>

namespace refquery {

/// Hardware concurrency, at least 1.
std::size_t default_threads();

/// Calls fn(i) for every i in [0, count) using up to `threads` workers.
/// Each index runs exactly once; results must be written to per-index
/// slots so the caller can reduce in index order. The first exception (by
/// index) is rethrown after all workers finish.
void parallel_for(std::size_t count, std::size_t threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace refquery
