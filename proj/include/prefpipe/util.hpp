#pragma once

#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "prefpipe/error.hpp"
#include "prefpipe/rng.hpp"

namespace prefpipe {

// Runs fn(0..n-1) on up to `jobs` threads. Results must be written to
// per-index slots by the caller; the first exception wins and is rethrown
// after all workers finish.
inline void parallel_run(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
  if (n == 0) return;
  if (jobs <= 1 || n == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> threads;
  const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
  threads.reserve(count);
  for (std::size_t t = 0; t < count; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

struct ParsedUrl {
  std::string origin;       // scheme://host[:port], what httplib::Client takes
  std::string path_prefix;  // leading path, no trailing slash
};

inline ParsedUrl parse_base_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error("invalid URL (missing scheme): " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  ParsedUrl p;
  if (path_start == std::string::npos) {
    p.origin = url;
  } else {
    p.origin = url.substr(0, path_start);
    p.path_prefix = url.substr(path_start);
    while (!p.path_prefix.empty() && p.path_prefix.back() == '/') p.path_prefix.pop_back();
  }
  return p;
}

// Exponential backoff with multiplicative jitter in [0.5, 1.0).
inline int backoff_delay_ms(int base_ms, int attempt, Rng& rng) {
  double delay = static_cast<double>(base_ms);
  for (int i = 0; i < attempt; ++i) delay *= 2.0;
  return static_cast<int>(delay * (0.5 + 0.5 * rng.next_uniform()));
}

}  // namespace prefpipe
