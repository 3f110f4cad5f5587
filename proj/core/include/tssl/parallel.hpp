#pragma once

#include <cstddef>
#include <functional>

namespace tssl {

/// Worker count used by batch-parallel kernels. 0 selects hardware concurrency.
void set_thread_count(std::size_t n);
std::size_t thread_count();

/// Split [0, n) into fixed chunks of `chunk` items and call
/// fn(chunk_index, begin, end) for each, possibly concurrently. Chunk
/// boundaries never depend on the thread count, so callers that reduce
/// per-chunk partials in chunk order get bit-identical results for any
/// number of workers.
void parallel_chunks(std::size_t n, std::size_t chunk,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn);

inline std::size_t chunk_count(std::size_t n, std::size_t chunk) { return (n + chunk - 1) / chunk; }

}  // namespace tssl
