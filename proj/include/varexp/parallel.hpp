#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace varexp {

inline std::atomic<int>& thread_setting() {
  static std::atomic<int> threads{1};
  return threads;
}

/// Worker count used by parallel_for; 1 runs inline.
inline void set_threads(int n) { thread_setting() = std::max(1, n); }
inline int threads() { return thread_setting().load(); }

/// Runs fn(i) for i in [0, n). Each index is handled exactly once and callers
/// write only to slot i, so results do not depend on the worker count.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads()), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    pool.emplace_back([&fn, begin, end] {
      for (std::size_t i = begin; i < end; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace varexp
