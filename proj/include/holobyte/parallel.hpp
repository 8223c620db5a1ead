#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

namespace holobyte {

/// Worker count for kernel parallelism: hardware concurrency, capped by the
/// HOLOBYTE_THREADS environment variable when set to a positive integer.
inline std::size_t thread_count() {
  std::size_t n = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("HOLOBYTE_THREADS")) {
    try {
      const long cap = std::stol(env);
      if (cap > 0) n = std::min<std::size_t>(n, static_cast<std::size_t>(cap));
    } catch (...) {
    }
  }
  return n;
}

/// Runs fn(begin, end) over contiguous slices of [0, n). Each index is owned by
/// exactly one slice, so callers that write only to their own indices produce
/// results independent of the worker count.
template <class Fn>
void parallel_for(std::size_t n, std::size_t min_grain, Fn&& fn) {
  const std::size_t workers = std::min(thread_count(), min_grain ? n / min_grain : n);
  if (workers <= 1) {
    if (n) fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  const std::size_t step = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t b = w * step, e = std::min(n, b + step);
    if (b < e) pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, step));
  for (auto& t : pool) t.join();
}

}  // namespace holobyte
