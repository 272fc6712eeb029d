// Benchmark of the OpenMP kernels against the serial reference loops at the
// layer geometries the detector actually runs. Prints GFLOP/s per kernel and
// the max abs deviation between the two paths.

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "pollen/kernels.hpp"
#include "pollen/rng.hpp"
#include "pollen/threads.hpp"

using namespace pollen;
using kern::Pad;

namespace {

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::vector<float> randu(Rng& rng, size_t n, float lo = -1.f, float hi = 1.f) {
    std::vector<float> v(n);
    for (auto& x : v) x = static_cast<float>(rng.uniform(lo, hi));
    return v;
}

struct ConvCase {
    const char* name;
    int64_t h, w, cin, k, cout;
};

void bench_conv(const ConvCase& c, int repeats) {
    Rng rng(7);
    const int64_t oh = kern::conv_out_extent(c.h, c.k, 1, Pad::same);
    const int64_t ow = kern::conv_out_extent(c.w, c.k, 1, Pad::same);
    auto in = randu(rng, static_cast<size_t>(c.h * c.w * c.cin));
    auto ker = randu(rng, static_cast<size_t>(c.k * c.k * c.cin * c.cout));
    auto bias = randu(rng, static_cast<size_t>(c.cout));
    std::vector<float> out(static_cast<size_t>(oh * ow * c.cout));
    std::vector<float> out_ref(out.size());

    const double flops = 2.0 * static_cast<double>(oh * ow) * c.cout * c.k * c.k * c.cin;

    double t0 = now_s();
    kern::ref::conv2d_forward(in.data(), c.h, c.w, c.cin, ker.data(), bias.data(), c.k, c.cout, 1,
                              Pad::same, out_ref.data());
    const double t_ref = now_s() - t0;

    t0 = now_s();
    for (int r = 0; r < repeats; ++r)
        kern::conv2d_forward(in.data(), c.h, c.w, c.cin, ker.data(), bias.data(), c.k, c.cout, 1,
                             Pad::same, out.data());
    const double t_omp = (now_s() - t0) / repeats;

    float max_diff = 0.f;
    for (size_t i = 0; i < out.size(); ++i)
        max_diff = std::max(max_diff, std::abs(out[i] - out_ref[i]));

    std::printf("conv %-22s ref %8.1f ms (%6.2f GF/s)   omp %8.2f ms (%6.2f GF/s)   x%5.1f   maxdiff %.2e\n",
                c.name, t_ref * 1e3, flops / t_ref * 1e-9, t_omp * 1e3, flops / t_omp * 1e-9,
                t_ref / t_omp, max_diff);
}

void bench_gemm(int64_t m, int64_t n, int64_t k, int repeats) {
    Rng rng(11);
    auto a = randu(rng, static_cast<size_t>(m * k));
    auto b = randu(rng, static_cast<size_t>(k * n));
    std::vector<float> c_ref(static_cast<size_t>(m * n), 0.f);
    std::vector<float> c_omp(c_ref.size(), 0.f);
    const double flops = 2.0 * static_cast<double>(m) * n * k;

    double t0 = now_s();
    kern::ref::gemm_nn(m, n, k, a.data(), b.data(), c_ref.data());
    const double t_ref = now_s() - t0;

    t0 = now_s();
    for (int r = 0; r < repeats; ++r) {
        std::fill(c_omp.begin(), c_omp.end(), 0.f);
        kern::gemm_nn(m, n, k, a.data(), b.data(), c_omp.data());
    }
    const double t_omp = (now_s() - t0) / repeats;

    float max_diff = 0.f;
    for (size_t i = 0; i < c_ref.size(); ++i)
        max_diff = std::max(max_diff, std::abs(c_ref[i] - c_omp[i]));

    std::printf("gemm %5ld x %5ld x %5ld   ref %8.1f ms (%6.2f GF/s)   omp %8.2f ms (%6.2f GF/s)   x%5.1f   maxdiff %.2e\n",
                static_cast<long>(m), static_cast<long>(n), static_cast<long>(k), t_ref * 1e3,
                flops / t_ref * 1e-9, t_omp * 1e3, flops / t_omp * 1e-9, t_ref / t_omp, max_diff);
}

}  // namespace

int main(int argc, char** argv) {
    int threads_n = 0;
    int repeats = 3;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--threads" && i + 1 < argc) threads_n = std::atoi(argv[++i]);
        if (arg == "--repeats" && i + 1 < argc) repeats = std::atoi(argv[++i]);
    }
    if (threads_n > 0) set_threads(threads_n);
    std::printf("threads: %d\n\n", threads());

    bench_gemm(4096, 256, 288, repeats);
    bench_gemm(1024, 1024, 1024, repeats);
    bench_gemm(169, 1024, 11520, repeats);

    std::printf("\n");
    const ConvCase cases[] = {
        {"416x416x3  -> 32 (3x3)", 416, 416, 3, 3, 32},
        {"208x208x32 -> 64 (3x3)", 208, 208, 32, 3, 64},
        {"104x104x16 -> 32 (3x3)", 104, 104, 16, 3, 32},
        {"52x52x32   -> 64 (3x3)", 52, 52, 32, 3, 64},
        {"13x13x1280 ->1024(3x3)", 13, 13, 1280, 3, 1024},
    };
    for (const auto& c : cases) bench_conv(c, repeats);
    return 0;
}
