#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <thread>
#include <vector>

namespace gser {

namespace detail {
inline std::atomic<int>& thread_cap() {
  static std::atomic<int> cap{0};  // 0 = hardware concurrency
  return cap;
}
}  // namespace detail

inline void set_max_threads(int n) { detail::thread_cap().store(n < 0 ? 0 : n); }

inline int max_threads() {
  int cap = detail::thread_cap().load();
  if (cap > 0) return cap;
  unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : int(hw);
}

// Runs fn(i) for i in [begin, end), split into contiguous per-thread ranges.
// Work items must write disjoint outputs; results are then identical for any
// thread count. The first exception thrown by a worker is rethrown.
template <class F>
void parallel_for(std::int64_t begin, std::int64_t end, F&& fn) {
  const std::int64_t n = end - begin;
  if (n <= 0) return;
  const int nt = int(std::min<std::int64_t>(max_threads(), n));
  if (nt <= 1) {
    for (std::int64_t i = begin; i < end; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(nt - 1);
  std::exception_ptr err;
  std::atomic<bool> failed{false};
  auto run_range = [&](std::int64_t b, std::int64_t e) {
    try {
      for (std::int64_t i = b; i < e && !failed.load(std::memory_order_relaxed); ++i) fn(i);
    } catch (...) {
      if (!failed.exchange(true)) err = std::current_exception();
    }
  };
  const std::int64_t chunk = (n + nt - 1) / nt;
  for (int t = 1; t < nt; ++t) {
    std::int64_t b = begin + t * chunk;
    std::int64_t e = std::min(end, b + chunk);
    if (b < e) workers.emplace_back(run_range, b, e);
  }
  run_range(begin, std::min(end, begin + chunk));
  for (auto& w : workers) w.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace gser
