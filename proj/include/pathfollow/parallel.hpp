#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace pathfollow {

/// Runs fn(i) for i in [0, count) on up to `workers` threads. Jobs write
/// their results by index, so the outcome never depends on scheduling. If
/// jobs throw, the exception of the lowest failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t count, unsigned workers, Fn&& fn) {
  if (count == 0) return;
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(count)));
  std::vector<std::exception_ptr> errors(count);
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
          try {
            fn(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace pathfollow
