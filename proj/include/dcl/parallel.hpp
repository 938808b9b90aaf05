#pragma once

#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace dcl {

// Runs fn(i) for i in [0, n). Work is split into contiguous chunks; results
// must go to disjoint slots so the outcome is independent of thread count.
inline void parallel_for(int n, int threads,
                         const std::function<void(int)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = std::min(threads, n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      for (int i = t; i < n; i += workers) fn(i);
    });
  }
  for (std::thread& th : pool) th.join();
}

}  // namespace dcl
