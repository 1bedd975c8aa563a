#pragma once

#include <atomic>
#include <functional>
#include <thread>
#include <vector>

namespace terra {

// Runs fn(i) for i in [0, n) across up to `threads` workers. Each index is
// handled exactly once and callers write into per-index slots, so results
// do not depend on scheduling.
inline void parallel_for(std::size_t n, int threads,
                         const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
  };
  std::vector<std::thread> pool;
  const auto count = static_cast<std::size_t>(threads) < n
                         ? static_cast<std::size_t>(threads)
                         : n;
  pool.reserve(count);
  for (std::size_t t = 0; t < count; ++t) pool.emplace_back(worker);
  for (std::thread& t : pool) t.join();
}

}  // namespace terra
