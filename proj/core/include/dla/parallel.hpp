#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace dla {

namespace detail {
inline std::atomic_int& thread_count_storage() {
  static std::atomic_int n{0};
  return n;
}
}  // namespace detail

// Global worker count for sample-parallel loops. 0 = hardware concurrency,
// 1 = deterministic single-threaded mode (results are identical either way).
inline void set_thread_count(int n) { detail::thread_count_storage() = n; }

inline int thread_count() {
  int n = detail::thread_count_storage();
  if (n <= 0) n = static_cast<int>(std::thread::hardware_concurrency());
  return std::max(1, n);
}

// Runs fn(begin, end) over fixed-size chunks of [0, total). Chunk boundaries
// do not depend on the worker count and chunks never share state, so results
// are identical for any thread count.
inline void parallel_chunks(int total, int chunk, const std::function<void(int, int)>& fn) {
  if (total <= 0) return;
  const int nchunks = (total + chunk - 1) / chunk;
  const int workers = std::min(thread_count(), nchunks);
  if (workers <= 1) {
    for (int c = 0; c < nchunks; ++c) fn(c * chunk, std::min(total, (c + 1) * chunk));
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  std::atomic_int next{0};
  std::atomic_bool failed{false};
  std::exception_ptr error;
  std::mutex error_mu;
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&]() {
      try {
        for (int c = next.fetch_add(1); c < nchunks && !failed; c = next.fetch_add(1)) {
          fn(c * chunk, std::min(total, (c + 1) * chunk));
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
        failed = true;
      }
    });
  }
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace dla
