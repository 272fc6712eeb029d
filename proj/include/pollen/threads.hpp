#pragma once

namespace pollen {

// Process-wide worker count for the parallel kernels. 1 selects the
// bit-deterministic single-threaded path (the kernels are owner-computes,
// so in practice any count reproduces the single-threaded bytes).
void set_threads(int n);
int threads();

}  // namespace pollen
