#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <limits>
#include <thread>
#include <vector>

namespace bagcal {

/// Runs body(i) for i in [0, count) on up to `threads` workers. Each index is
/// processed exactly once; callers write results into per-index slots and
/// reduce afterwards in index order, which keeps results independent of the
/// worker count. If any body throws, the exception from the lowest failing
/// index is rethrown.
template <typename Body>
void parallel_for(std::size_t count, unsigned threads, Body&& body) {
  if (count == 0) return;
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, count);
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::size_t> error_index(workers, std::numeric_limits<std::size_t>::max());

  auto work = [&](std::size_t slot) {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        body(i);
      } catch (...) {
        if (i < error_index[slot]) {
          error_index[slot] = i;
          errors[slot] = std::current_exception();
        }
      }
    }
  };

  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(work, t);
  work(0);
  for (auto& th : pool) th.join();

  std::size_t best = workers;
  for (std::size_t t = 0; t < workers; ++t) {
    if (errors[t] && (best == workers || error_index[t] < error_index[best])) best = t;
  }
  if (best != workers) std::rethrow_exception(errors[best]);
}

}  // namespace bagcal
