#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace detdb::detail {

// Runs fn(worker) on `threads` workers and rethrows the first exception
// after all of them joined.
template <class Fn>
void run_workers(std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, threads);
  if (threads == 1) {
    fn(std::size_t{0});
    return;
  }
  std::exception_ptr error;
  std::mutex mu;
  {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t w = 0; w < threads; ++w) {
      pool.emplace_back([&, w] {
        try {
          fn(w);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!error) error = std::current_exception();
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

// Item i goes to worker i % threads.
template <class Fn>
void round_robin(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  run_workers(threads, [&](std::size_t w) {
    for (std::size_t i = w; i < count; i += threads) fn(i);
  });
}

// Contiguous 1-based ranges [lo, hi] over [1, n]; fn(lo, hi, slot).
template <class Fn>
void ranges(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  const std::size_t chunk = n == 0 ? 0 : (n + threads - 1) / threads;
  run_workers(threads, [&](std::size_t w) {
    const std::size_t lo = 1 + w * chunk;
    const std::size_t hi = std::min(n, lo + chunk - 1);
    if (lo <= hi) fn(lo, hi, w);
  });
}

}  // namespace detdb::detail
