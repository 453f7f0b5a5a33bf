#pragma once

#include <cstddef>
#include <functional>

namespace twoscale {

/// Runs task(i) for i in [0, count) on up to `threads` workers. Tasks are
/// handed out dynamically but each index runs exactly once, so callers that
/// write result[i] and reduce afterwards in index order get the same answer
/// for any thread count. The first exception thrown by a task is rethrown
/// after all workers have joined.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& task);

/// Hardware concurrency, at least 1.
std::size_t default_thread_count() noexcept;

}  // namespace twoscale
