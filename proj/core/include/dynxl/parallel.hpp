#pragma once

#include <cstddef>
#include <functional>

namespace dynxl {

inline constexpr const char* kThreadsEnv = "DYNXL_THREADS";

/// Worker count from DYNXL_THREADS, defaulting to 1. Results never depend
/// on it: work items write disjoint outputs and reductions happen in item
/// order afterwards.
std::size_t thread_count();

/// Runs body(i) for i in [0, n) on up to thread_count() threads. The first
/// exception thrown by any item is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace dynxl
