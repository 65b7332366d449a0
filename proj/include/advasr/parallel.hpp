#pragma once

#include <cstddef>
#include <functional>

namespace advasr {

// Thread count: ADVASR_THREADS env var if set, else hardware concurrency.
int worker_count();

// Runs fn(i) for i in [0, n). Results must not depend on execution order;
// callers that accumulate do so into per-index slots and reduce in index
// order so output stays deterministic for any thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace advasr
