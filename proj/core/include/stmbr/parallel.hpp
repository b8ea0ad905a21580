#pragma once

#include <cstdint>
#include <functional>

namespace stmbr {

/// Effective worker count. Resolved from set_worker_count() capped by the
/// STMB_THREADS environment variable (0 = strict sequential mode).
int worker_count();

/// Requests a worker count; 0 means sequential. The environment cap still
/// applies. Pass -1 to restore the automatic default.
void set_worker_count(int n);

/// Splits [0, n) into contiguous chunks across workers. Each index is
/// processed by exactly one worker, so any reduction owned by a single index
/// is bit-identical regardless of schedule.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

}  // namespace stmbr
