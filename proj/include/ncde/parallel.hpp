#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace ncde::detail {

/// Runs fn(i) for i in [0, n) on up to `threads` workers using a static
/// interleaved partition. The first exception thrown (by lowest index) is
/// rethrown after all workers join.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn&& fn) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(std::max(threads, 1U), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) {
      fn(i);
    }
    return;
  }
  std::mutex guard;
  std::exception_ptr first_error;
  std::size_t first_index = n;
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(guard);
            if (i < first_index) {
              first_index = i;
              first_error = std::current_exception();
            }
            return;
          }
        }
      });
    }
  }
  if (first_error) {
    std::rethrow_exception(first_error);
  }
}

[[nodiscard]] inline unsigned default_threads() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1U : hw;
}

}  // namespace ncde::detail
