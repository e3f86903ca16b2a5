// Benchmark of the OpenMP kernels against their serial reference
// implementations on model-sized workloads.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "uqtf/kernels.hpp"
#include "uqtf/reference.hpp"
#include "uqtf/tensor.hpp"

using namespace uqtf;
using Clock = std::chrono::steady_clock;

namespace {

Tensor<float> randu(Shape shape, uint64_t seed) {
    Tensor<float> t(std::move(shape));
    uint64_t x = seed;
    for (int64_t i = 0; i < t.numel(); ++i) {
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        t.mutable_data()[i] = static_cast<float>((x >> 11) * (1.0 / 9007199254740992.0) - 0.5);
    }
    return t;
}

template <typename F>
double time_ms(F&& fn, int reps) {
    fn();  // warm-up
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, double flops, double serial_ms, double omp_ms, double max_diff) {
    std::printf("%-24s serial %8.3f ms  omp %8.3f ms  speedup %5.2fx  %7.2f GFLOP/s  maxdiff %.2e\n",
                name, serial_ms, omp_ms, serial_ms / omp_ms, flops / (omp_ms * 1e6), max_diff);
}

double max_diff(const Tensor<float>& a, const Tensor<float>& b) {
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.at(i)) - static_cast<double>(b.at(i))));
    return m;
}

}  // namespace

int main(int argc, char** argv) {
    int reps = 5;
    for (int i = 1; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--reps" && i + 1 < argc) reps = std::atoi(argv[++i]);
#ifdef _OPENMP
        if (arg == "--threads" && i + 1 < argc) omp_set_num_threads(std::atoi(argv[++i]));
#endif
    }
#ifdef _OPENMP
    std::printf("threads: %d, reps: %d\n", omp_get_max_threads(), reps);
#endif

    {
        const int64_t m = 256, k = 256, n = 256;
        auto a = randu({m, k}, 1), b = randu({k, n}, 2);
        Tensor<float> c1({m, n}), c2({m, n});
        const double serial =
            time_ms([&] { ref::matmul(a.data(), b.data(), c1.mutable_data(), m, k, n); }, reps);
        const double par =
            time_ms([&] { kern::matmul(a.data(), b.data(), c2.mutable_data(), m, k, n); }, reps);
        report("matmul 256^3", 2.0 * m * k * n, serial, par, max_diff(c1, c2));
    }
    {
        const int64_t B = 16, Ci = 16, Co = 32, T = 120, V = 16;
        auto x = randu({B, Ci, T, V}, 3);
        auto w = randu({Co, Ci}, 4);
        auto bias = randu({Co}, 5);
        Tensor<float> y1({B, Co, T, V}), y2({B, Co, T, V});
        const double serial = time_ms(
            [&] { ref::channel_map(x.data(), w.data(), bias.data(), y1.mutable_data(), B, Ci, Co, T * V); },
            reps);
        const double par = time_ms(
            [&] { kern::channel_map(x.data(), w.data(), bias.data(), y2.mutable_data(), B, Ci, Co, T * V); },
            reps);
        report("channel_map 16x16->32", 2.0 * B * Ci * Co * T * V, serial, par, max_diff(y1, y2));
    }
    {
        const int64_t B = 16, Ci = 32, Co = 32, T = 60, V = 16, K = 9, stride = 1, pad = 4;
        const int64_t To = (T + 2 * pad - K) / stride + 1;
        auto x = randu({B, Ci, T, V}, 6);
        auto w = randu({Co, Ci, K}, 7);
        Tensor<float> y1({B, Co, To, V}), y2({B, Co, To, V});
        const double serial = time_ms(
            [&] {
                ref::temporal_conv<float>(x.data(), w.data(), nullptr, y1.mutable_data(), B, Ci, Co, T, V,
                                   K, stride, pad, To);
            },
            reps);
        const double par = time_ms(
            [&] {
                kern::temporal_conv<float>(x.data(), w.data(), nullptr, y2.mutable_data(), B, Ci, Co, T,
                                    V, K, stride, pad, To);
            },
            reps);
        report("temporal_conv K9", 2.0 * B * Ci * Co * To * V * K, serial, par, max_diff(y1, y2));
    }
    {
        const int64_t B = 16, C = 32, T = 120, V = 16;
        auto x = randu({B, C, T, V}, 8);
        auto m = randu({B, V, V}, 9);
        Tensor<float> y1({B, C, T, V}), y2({B, C, T, V});
        const double serial =
            time_ms([&] { ref::node_mix(x.data(), m.data(), y1.mutable_data(), B, C, T, V); }, reps);
        const double par =
            time_ms([&] { kern::node_mix(x.data(), m.data(), y2.mutable_data(), B, C, T, V); }, reps);
        report("node_mix V16", 2.0 * B * C * T * V * V, serial, par, max_diff(y1, y2));
    }
    return 0;
}
