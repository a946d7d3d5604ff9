#pragma once

#include <atomic>
#include <cstdlib>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace urwkv {

namespace detail {
inline std::atomic<int>& thread_override() {
    static std::atomic<int> n{0};
    return n;
}
}  // namespace detail

// Worker count for parallel kernels. URWKV_THREADS caps it; 0 means
// "whatever OpenMP gives us". Results are bitwise independent of the
// count because every kernel iteration owns its output slots.
inline int max_threads() {
    int n = detail::thread_override().load(std::memory_order_relaxed);
    if (n <= 0) {
        if (const char* env = std::getenv("URWKV_THREADS")) {
            n = std::atoi(env);
        }
    }
#ifdef _OPENMP
    int hw = omp_get_max_threads();
    if (n <= 0 || n > hw) n = hw;
#else
    n = 1;
#endif
    return n < 1 ? 1 : n;
}

inline void set_max_threads(int n) {
    detail::thread_override().store(n, std::memory_order_relaxed);
}

}  // namespace urwkv
