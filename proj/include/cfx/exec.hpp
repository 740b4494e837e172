#ifndef CFX_EXEC_HPP
#define CFX_EXEC_HPP

#include <cstddef>

namespace cfx {

// Execution policy for the data-parallel kernels. Every kernel is written so
// that its output is bitwise identical under either policy and under any
// thread count: loop bodies only write slots owned by their index, and any
// floating-point reduction happens afterwards in a fixed order.
enum class Exec { serial, parallel };

// Global thread cap for Exec::parallel (0 = OpenMP default).
void set_max_threads(int n);
int max_threads();

namespace detail {
void run_indexed(std::size_t n, Exec policy, void (*fn)(std::size_t, void*), void* ctx);
}

template <typename F>
void parallel_for(std::size_t n, Exec policy, F&& fn) {
    auto trampoline = [](std::size_t i, void* ctx) { (*static_cast<F*>(ctx))(i); };
    detail::run_indexed(n, policy, trampoline, &fn);
}

}  // namespace cfx

#endif
