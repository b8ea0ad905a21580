#include "stmbr/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>
#include <vector>

namespace stmbr {

namespace {

int env_cap() {
  static const int cap = [] {
    const char* v = std::getenv("STMB_THREADS");
    if (!v || !*v) return 1 << 20;
    const int n = std::atoi(v);
    return n <= 0 ? 1 : n;
  }();
  return cap;
}

int auto_workers() {
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::clamp(hw, 1u, 16u));
}

int g_requested = -1;

}  // namespace

int worker_count() {
  const int req = g_requested < 0 ? auto_workers() : (g_requested == 0 ? 1 : g_requested);
  return std::max(1, std::min(req, env_cap()));
}

void set_worker_count(int n) { g_requested = n < 0 ? -1 : n; }

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  const int workers = static_cast<int>(std::min<int64_t>(worker_count(), n));
  if (workers == 1) {
    fn(0, n);
    return;
  }
  const int64_t chunk = (n + workers - 1) / workers;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers - 1));
  for (int w = 1; w < workers; ++w) {
    const int64_t lo = w * chunk;
    const int64_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([&fn, lo, hi] { fn(lo, hi); });
  }
  fn(0, std::min(n, chunk));
  for (auto& t : pool) t.join();
}

}  // namespace stmbr
