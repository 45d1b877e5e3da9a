#pragma once

// Index-parallel map over pure work items. Results land in index order, so
// any reduction done afterwards is independent of the worker count.

#include <cstddef>
#include <exception>
#include <type_traits>
#include <vector>

#include <omp.h>

namespace stochflow {

/// 0 or negative means "all available threads".
inline int resolve_workers(int requested) {
  return requested > 0 ? requested : omp_get_max_threads();
}

template <class F>
auto serial_map(std::size_t count, F&& f) {
  using R = std::decay_t<std::invoke_result_t<F&, std::size_t>>;
  std::vector<R> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) out.push_back(f(k));
  return out;
}

/// Runs f(0..count-1) on `workers` OpenMP threads. The first exception by
/// index is rethrown after all items finish.
template <class F>
auto parallel_map(std::size_t count, int workers, F&& f) {
  using R = std::decay_t<std::invoke_result_t<F&, std::size_t>>;
  const int threads = resolve_workers(workers);
  if (threads == 1 || count < 2) return serial_map(count, f);

  std::vector<R> out(count);
  std::vector<std::exception_ptr> errors(count);
  const auto n = static_cast<long long>(count);
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (long long k = 0; k < n; ++k) {
    try {
      out[static_cast<std::size_t>(k)] = f(static_cast<std::size_t>(k));
    } catch (...) {
      errors[static_cast<std::size_t>(k)] = std::current_exception();
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace stochflow
