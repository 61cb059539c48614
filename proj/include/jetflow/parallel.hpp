#ifndef JETFLOW_PARALLEL_HPP
#define JETFLOW_PARALLEL_HPP

#include <functional>

namespace jetflow {

// Worker count: JETFLOW_THREADS if set and positive, else hardware concurrency.
int worker_count();

// Runs body(i) for i in [0, n). Each index is handled exactly once; callers
// write results by index so the outcome does not depend on scheduling.
void parallel_for(int n, const std::function<void(int)>& body);

}  // namespace jetflow

#endif
