#include "fbsde/common.hpp"

#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fbsde {

void parallel_for(Exec policy, int n, const std::function<void(int)>& body) {
    if (policy == Exec::Serial) {
        for (int i = 0; i < n; ++i) body(i);
        return;
    }
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic, 1)
    for (int i = 0; i < n; ++i) body(i);
#else
    for (int i = 0; i < n; ++i) body(i);
#endif
}

int hardware_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    const unsigned n = std::thread::hardware_concurrency();
    return n == 0 ? 1 : static_cast<int>(n);
#endif
}

} // namespace fbsde
