#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace wtl {

/// Worker count from WTLAB_WORKERS (default 1).
inline unsigned worker_count() {
  if (const char* env = std::getenv("WTLAB_WORKERS")) {
    try {
      const long n = std::stol(env);
      if (n >= 1) return unsigned(std::min<long>(n, 256));
    } catch (const std::exception&) {
    }
  }
  return 1;
}

/// Runs body(block) for block = 0..blocks-1 on the worker pool.  Blocks are
/// handed out dynamically, so body must write only to block-owned output;
/// callers merge per-block results in block order to stay deterministic.
template <class Body>
void parallel_blocks(std::size_t blocks, Body&& body, unsigned workers = worker_count()) {
  workers = unsigned(std::min<std::size_t>(workers, blocks));
  if (workers <= 1) {
    for (std::size_t b = 0; b < blocks; ++b) body(b);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr error;
  auto run = [&] {
    while (true) {
      std::size_t b;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (error || next >= blocks) return;
        b = next++;
      }
      try {
        body(b);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(run);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace wtl
