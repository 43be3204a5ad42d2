#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace bpct {

namespace detail {
inline std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{[] {
    const char* env = std::getenv("BPCT_THREADS");
    if (env == nullptr) return 0;
    try {
      return std::max(0, std::stoi(env));
    } catch (...) {
      return 0;
    }
  }()};
  return cap;
}
}  // namespace detail

// 0 means "use hardware concurrency". Initialized from BPCT_THREADS.
inline void set_thread_cap(int n) { detail::thread_cap() = std::max(0, n); }

inline int thread_count() {
  const int cap = detail::thread_cap();
  if (cap > 0) return cap;
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n). Each index is handled by exactly one thread and
// kernels write disjoint outputs per index, so results do not depend on the
// thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_per_thread = 1) {
  const std::size_t threads = std::min<std::size_t>(
      static_cast<std::size_t>(thread_count()), std::max<std::size_t>(1, n / std::max<std::size_t>(1, min_per_thread)));
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  const std::size_t chunk = (n + threads - 1) / threads;
  for (std::size_t t = 1; t < threads; ++t) {
    const std::size_t lo = t * chunk;
    const std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (std::size_t i = 0; i < std::min(n, chunk); ++i) fn(i);
  for (auto& th : pool) th.join();
}

}  // namespace bpct
