#pragma once
// Shared error types and small utilities.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ghnn {

// Raised for malformed or inconsistent input data (CLI exit code 3).
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Raised when a computation produces non-finite values (CLI exit code 4).
struct numeric_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline unsigned default_thread_count() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : n;
}

// Runs fn(worker, begin, end) over a fixed contiguous partition of [0, n).
// The partition depends only on (n, threads), so per-worker reductions can
// be combined in worker order for a deterministic result. A worker exception
// is rethrown (lowest worker index wins) after all workers have joined.
inline void parallel_chunks(std::size_t n, unsigned threads,
                            const std::function<void(unsigned, std::size_t, std::size_t)>& fn) {
  if (n == 0) return;
  unsigned workers = threads == 0 ? 1 : threads;
  if (workers > n) workers = static_cast<unsigned>(n);
  if (workers == 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::vector<std::exception_ptr> errors(workers);
  std::size_t base = n / workers;
  std::size_t rem = n % workers;
  std::size_t begin = 0;
  for (unsigned w = 0; w < workers; ++w) {
    std::size_t len = base + (w < rem ? 1 : 0);
    std::size_t end = begin + len;
    pool.emplace_back([&fn, &errors, w, begin, end] {
      try {
        fn(w, begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
    begin = end;
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace ghnn
