#include "pollen/threads.hpp"

#include <omp.h>

#include <algorithm>

namespace pollen {

namespace {
int g_threads = 0;  // 0 = not set yet, use OpenMP default
}

void set_threads(int n) {
    g_threads = std::max(1, n);
    omp_set_num_threads(g_threads);
}

int threads() { return g_threads > 0 ? g_threads : omp_get_max_threads(); }

}  // namespace pollen
