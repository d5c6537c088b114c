#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <thread>
#include <vector>

namespace socnn {

// Worker budget: SHAPECONV_THREADS env var caps it, hardware count otherwise.
inline int worker_count() {
  int hw = static_cast<int>(std::thread::hardware_concurrency());
  if (hw < 1) hw = 1;
  if (const char* env = std::getenv("SHAPECONV_THREADS")) {
    const int cap = std::atoi(env);
    if (cap >= 1 && cap < hw) hw = cap;
  }
  return hw;
}

// Runs fn(0..n-1) across up to `threads` workers (0 = worker_count()).
// Work is claimed through an atomic counter; callers must not rely on any
// particular assignment of indices to threads. The first exception thrown by
// a worker is rethrown on the calling thread after all workers join.
inline void parallel_for(int64_t n, const std::function<void(int64_t)>& fn, int threads = 0) {
  if (n <= 0) return;
  int workers = threads > 0 ? threads : worker_count();
  if (workers > n) workers = static_cast<int>(n);
  if (workers <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  std::exception_ptr first_error = nullptr;
  std::atomic<bool> failed{false};
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      while (true) {
        const int64_t i = next.fetch_add(1);
        if (i >= n || failed.load()) return;
        try {
          fn(i);
        } catch (...) {
          bool expected = false;
          if (failed.compare_exchange_strong(expected, true)) {
            first_error = std::current_exception();
          }
          return;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace socnn
