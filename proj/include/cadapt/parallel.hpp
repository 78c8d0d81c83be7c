#ifndef CADAPT_PARALLEL_HPP
#define CADAPT_PARALLEL_HPP

#include <cstddef>
#include <functional>

namespace cadapt {

/// Worker cap used by parallel_for; 1 means run inline.
void set_thread_count(std::size_t n);
std::size_t thread_count();

/// Calls fn(i) for i in [0, n), split into contiguous blocks across workers.
/// Each index must write only its own outputs; callers reduce afterwards in
/// index order, so results do not depend on the worker count.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace cadapt

#endif
