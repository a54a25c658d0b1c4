#pragma once

#include <cstddef>
#include <functional>

namespace modalmeta {

/// Worker count for task-parallel loops: MODALMETA_THREADS when set
/// (must be a positive integer), otherwise the OpenMP default. Read on
/// every call so the environment can change between runs in one process.
std::size_t worker_count();

/// Runs fn(i) for i in [0, n) across workers (static schedule). Callers
/// write per-index output slots and reduce in index order afterwards, which
/// keeps results bit-identical for any worker count. If any iteration
/// throws, the exception from the lowest failing index is rethrown once the
/// loop finishes.
void parallel_for_index(std::size_t n, const std::function<void(std::size_t)>& fn);

/// Same contract, one thread, ascending order. This is the reference path
/// the parallel loop is tested against.
void serial_for_index(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace modalmeta
