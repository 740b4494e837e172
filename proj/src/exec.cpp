#include "cfx/exec.hpp"

#include <exception>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace cfx {

namespace {
int g_max_threads = 0;  // 0 = library default
}

void set_max_threads(int n) { g_max_threads = n < 0 ? 0 : n; }

int max_threads() { return g_max_threads; }

namespace detail {

void run_indexed(std::size_t n, Exec policy, void (*fn)(std::size_t, void*), void* ctx) {
    if (policy == Exec::serial || n < 2) {
        for (std::size_t i = 0; i < n; ++i) fn(i, ctx);
        return;
    }
#ifdef _OPENMP
    // Exceptions may not cross an OpenMP region; capture one and rethrow.
    std::exception_ptr err = nullptr;
    const long long count = static_cast<long long>(n);
    const int threads = g_max_threads > 0 ? g_max_threads : omp_get_max_threads();
#pragma omp parallel for schedule(static) num_threads(threads)
    for (long long i = 0; i < count; ++i) {
        try {
            fn(static_cast<std::size_t>(i), ctx);
        } catch (...) {
#pragma omp critical(cfx_run_indexed_err)
            {
                if (!err) err = std::current_exception();
            }
        }
    }
    if (err) std::rethrow_exception(err);
#else
    for (std::size_t i = 0; i < n; ++i) fn(i, ctx);
#endif
}

}  // namespace detail

}  // namespace cfx
