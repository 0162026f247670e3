#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace manf {

/// Worker count: CODEC_THREADS if set, otherwise hardware concurrency.
inline std::size_t thread_count() {
  static const std::size_t count = [] {
    std::size_t hw = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("CODEC_THREADS")) {
      try {
        long v = std::stol(env);
        if (v >= 1) return std::min<std::size_t>(static_cast<std::size_t>(v), hw);
      } catch (...) {
      }
    }
    return hw;
  }();
  return count;
}

/// Runs body(i) for i in [0, n). Each index is handled by exactly one worker,
/// so a body that only writes state owned by its index stays deterministic.
template <class F>
void parallel_for(std::size_t n, F&& body) {
  std::size_t workers = std::min(thread_count(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers);
  for (std::size_t t = 0; t < workers; ++t) {
    pool.emplace_back([&, t] {
      for (std::size_t i = t; i < n; i += workers) body(i);
    });
  }
}

}  // namespace manf
