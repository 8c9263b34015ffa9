#pragma once

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace n2ntd::par {

// Process-wide switch between the OpenMP kernels and their serial twins.
// All parallel loops write disjoint outputs with serial inner reductions,
// so results are identical regardless of this switch or the thread count.
inline std::atomic<bool>& flag()
{
    static std::atomic<bool> on{true};
    return on;
}

inline bool enabled() { return flag().load(std::memory_order_relaxed); }
inline void set_enabled(bool on) { flag().store(on, std::memory_order_relaxed); }

inline int max_threads()
{
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

} // namespace n2ntd::par
