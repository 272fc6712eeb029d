#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace pollen {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0;
    int trials = 0;
};

// Central finite differences (perturbation 1e-4) against the analytic
// gradients, in 64-bit mode, over randomized small shapes. Covers every
// differentiable op plus the full detector + loss on a rendered two-grain
// slide at reduced resolution.
std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed, int trials_per_op = 20,
                                                 bool include_full_network = true);

inline constexpr double kGradCheckTolerance = 1e-4;

}  // namespace pollen
