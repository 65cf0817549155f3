#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <string>
#include <thread>
#include <vector>

namespace pension {

/// Worker count from PENSION_WORKERS, else hardware concurrency.
inline int default_worker_count() {
  if (const char* env = std::getenv("PENSION_WORKERS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(i) for i in [0, n) on up to `workers` threads. Items are
/// assigned in fixed contiguous blocks, so any per-item result is independent
/// of scheduling. The first exception thrown is rethrown.
template <typename Body>
void parallel_for(int n, int workers, Body&& body) {
  workers = std::clamp(workers, 1, std::max(n, 1));
  if (workers == 1) {
    for (int i = 0; i < n; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&, w] {
      const int begin = n * w / workers;
      const int end = n * (w + 1) / workers;
      try {
        for (int i = begin; i < end; ++i) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace pension
