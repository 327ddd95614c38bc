#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace mfg {

// Worker count for scenario-level parallelism, capped by SOLVER_THREADS.
// Defaults to 1: all reductions then run in a fixed order and results are
// bit-reproducible; with more workers each task writes its own slot and the
// final reduction stays serial, so reproducibility is preserved.
inline int worker_count() {
  if (const char* env = std::getenv("SOLVER_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

template <class F>
void parallel_for(int n, F&& body) {
  int workers = worker_count();
  if (workers <= 1 || n <= 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  if (workers > n) workers = n;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w]() {
      for (int i = w; i < n; i += workers) body(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace mfg
