#pragma once

#include <cstddef>
#include <functional>

namespace mixopt {

/// Worker count used by parallel sections (default 1). Results never depend on it.
void set_num_threads(int n);
int num_threads();

/// Runs fn(i) for i in [0, n). Work is split into contiguous blocks; callers
/// must write results into per-index slots and reduce them in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace mixopt
