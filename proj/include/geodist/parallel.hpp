#pragma once

#include <omp.h>

#include <exception>
#include <mutex>

namespace geodist {

/// Worker count for `threads` (0 = OpenMP default).
inline int resolve_threads(int threads) { return threads > 0 ? threads : omp_get_max_threads(); }

/// Runs fn(c) for c in [0, n_chunks). Each chunk must write only its own output
/// slots; the first exception thrown by any chunk is rethrown on the caller.
template <typename Fn>
void parallel_chunks(long n_chunks, int threads, Fn&& fn) {
  std::exception_ptr error;
  std::mutex error_mutex;
#pragma omp parallel for schedule(dynamic) num_threads(resolve_threads(threads))
  for (long c = 0; c < n_chunks; ++c) {
    try {
      fn(c);
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);
}

inline long chunk_count(long n, long chunk) { return (n + chunk - 1) / chunk; }

}  // namespace geodist
