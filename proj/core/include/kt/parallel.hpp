#pragma once

#include <cstdint>
#include <functional>

namespace kt {

/// Worker count used by parallel_for. Defaults to the hardware concurrency,
/// capped by the KSPACE_TRIAGE_THREADS environment variable when set.
int thread_count();

/// Runs fn(begin, end) over a deterministic partition of [0, n).
/// Each index is processed by exactly one invocation, so results are
/// independent of the thread count as long as fn writes only to
/// index-owned outputs with a fixed per-index reduction order.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn);

} // namespace kt
