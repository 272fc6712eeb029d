// Finite-difference validation of every differentiable op and the full
// detector + loss stack, in 64-bit mode.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>

#include "pollen/gradcheck.hpp"

using namespace pollen;

TEST_CASE("analytic gradients match central finite differences (<= 1e-4)") {
    const auto results = run_gradcheck_suite(20260808ull, 20, true);
    CHECK(results.size() >= 19);
    for (const auto& r : results) {
        INFO(r.name, " max rel err ", r.max_rel_err);
        CHECK(r.max_rel_err <= kGradCheckTolerance);
        std::printf("  %-24s trials %2d   max rel err %.3e\n", r.name.c_str(), r.trials,
                    r.max_rel_err);
    }
}
