#pragma once

#include <functional>

namespace rdl {

/// Worker count for intra-op parallelism: RDL_THREADS if set, else the
/// hardware concurrency. Overridable for tests.
int thread_count();
void set_thread_count(int n);

/// Deterministic mode (RDL_DETERMINISTIC=1, or set explicitly) fixes the
/// chunking of every parallel reduction so buffers are bitwise reproducible
/// regardless of thread count.
bool deterministic();
void set_deterministic(bool on);

/// Number of chunks a reduction over `n` items is split into. Each chunk owns
/// a private accumulator; chunks are combined in index order.
int reduction_chunks(int n);

/// Runs body(chunk, begin, end) for `chunks` contiguous slices of [0, n).
void parallel_chunks(int n, int chunks, const std::function<void(int, int, int)> &body);

/// Runs body(i) for i in [0, n), possibly concurrently.
void parallel_for(int n, const std::function<void(int)> &body);

}  // namespace rdl
