#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace psmmlab {

// Worker bound from PSMMLAB_THREADS; unset or invalid means single-threaded.
inline std::size_t worker_count() {
  const char* env = std::getenv("PSMMLAB_THREADS");
  if (env == nullptr) return 1;
  try {
    long v = std::stol(env);
    return v > 0 ? static_cast<std::size_t>(v) : 1;
  } catch (...) {
    return 1;
  }
}

// Runs fn(i) for i in [0, n). Each index must write only to its own outputs;
// any reduction over indices is left to the caller so that the summation
// order never depends on the thread count.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const std::size_t workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace psmmlab
