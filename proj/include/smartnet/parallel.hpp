#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace smartnet {

// Worker count: SMARTNET_THREADS env override, else hardware concurrency.
inline int thread_count() {
  static const int n = [] {
    if (const char* env = std::getenv("SMARTNET_THREADS")) {
      const int v = std::atoi(env);
      if (v > 0) return v;
    }
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
  }();
  return n;
}

// Splits [0,n) into contiguous chunks, one thread per chunk. Callers must
// only write disjoint outputs per index and keep any per-output accumulation
// order internal to fn; results are then independent of the thread count.
inline void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  const int workers = std::min<int64_t>(thread_count(), n);
  if (workers <= 1) {
    fn(0, n);
    return;
  }
  const int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (int t = 1; t < workers; ++t) {
    const int64_t b = t * chunk;
    const int64_t e = std::min<int64_t>(n, b + chunk);
    if (b >= e) break;
    pool.emplace_back(fn, b, e);
  }
  fn(0, std::min<int64_t>(n, chunk));
  for (auto& th : pool) th.join();
}

}  // namespace smartnet
