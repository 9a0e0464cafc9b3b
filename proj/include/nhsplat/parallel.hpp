#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace nhsplat {

/// Static partition of [0, n) into `threads` contiguous chunks. fn(begin, end)
/// runs once per chunk; the first exception thrown by any chunk is rethrown.
template <class Fn>
void parallel_for(size_t n, int threads, Fn&& fn) {
  const size_t workers = std::min<size_t>(std::max(threads, 1), n);
  if (workers <= 1) {
    if (n > 0) fn(size_t(0), n);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  auto run = [&](size_t w) {
    const size_t begin = n * w / workers;
    const size_t end = n * (w + 1) / workers;
    try {
      fn(begin, end);
    } catch (...) {
      errors[w] = std::current_exception();
    }
  };
  for (size_t w = 1; w < workers; ++w) pool.emplace_back(run, w);
  run(0);
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// Thread count from NHSPLAT_THREADS, or `fallback` when unset or invalid.
int threads_from_env(int fallback = 1);

}  // namespace nhsplat
