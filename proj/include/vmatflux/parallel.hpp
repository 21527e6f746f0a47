#pragma once

#include <cstddef>
#include <functional>

namespace vmatflux {

/// Worker count used by parallel_for. Defaults to VMATFLUX_THREADS when set,
/// else the hardware concurrency.
unsigned thread_count();
/// 0 restores the default.
void set_thread_count(unsigned n);

/// Runs body(i) for i in [0, n) over contiguous static chunks. Each index is
/// handled by exactly one worker, so per-index results do not depend on the
/// schedule.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace vmatflux
