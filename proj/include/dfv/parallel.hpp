#pragma once

#include <cstddef>
#include <functional>

namespace dfv {

/// Worker cap, read once from DFV_THREADS (defaults to hardware concurrency).
std::size_t thread_count();
void set_thread_count(std::size_t n);

/// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is owned
/// by exactly one chunk, so results do not depend on the number of workers as
/// long as fn writes only to index-owned memory.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& fn,
                  std::size_t min_chunk = 1);

}  // namespace dfv
