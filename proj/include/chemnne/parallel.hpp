#pragma once

#include <cstddef>
#include <functional>

namespace chemnne {

/// Number of worker threads in the shared pool. Controlled by the
/// CHEM_EMU_THREADS environment variable (default: hardware concurrency,
/// capped at 8). Always at least 1.
int worker_count();

/// Runs fn(lo, hi) over a static partition of [begin, end). Each index is
/// handled by exactly one invocation, so results are bit-identical for any
/// thread count as long as fn writes disjoint outputs per index.
/// Runs inline when the range is small or the pool has a single thread.
void parallel_for(std::size_t begin, std::size_t end,
                  const std::function<void(std::size_t, std::size_t)>& fn);

}  // namespace chemnne
