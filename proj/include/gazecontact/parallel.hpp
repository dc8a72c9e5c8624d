#pragma once

#include <cstddef>
#include <functional>

namespace gc {

/// Worker cap: GC_THREADS if set and positive, else the hardware concurrency.
unsigned workerCount();

/// Runs body(i) for i in [0, n). Each index is processed exactly once and
/// bodies must only write to index-owned state, so results do not depend on
/// scheduling.
void parallelFor(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace gc
