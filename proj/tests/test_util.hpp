#pragma once

// Shared helpers for the test suites: seeded random tensors and a dense
// Jacobi eigensolver used as the SVD oracle. These stay independent of the
// library's power-iteration and kernel code paths.

#include <cmath>
#include <random>
#include <vector>

#include "uqtf/tensor.hpp"

namespace testutil {

template <typename S>
uqtf::Tensor<S> random_tensor(uqtf::Shape shape, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    uqtf::Tensor<S> t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ud(lo, hi);
    for (int64_t i = 0; i < t.numel(); ++i) t.mutable_data()[i] = static_cast<S>(ud(rng));
    return t;
}

template <typename S>
uqtf::Tensor<S> random_normal(uqtf::Shape shape, uint64_t seed, double stddev = 1.0) {
    uqtf::Tensor<S> t(std::move(shape));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, stddev);
    for (int64_t i = 0; i < t.numel(); ++i) t.mutable_data()[i] = static_cast<S>(nd(rng));
    return t;
}

template <typename S>
double max_abs_diff(const uqtf::Tensor<S>& a, const uqtf::Tensor<S>& b) {
    double m = 0;
    for (int64_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.at(i)) - static_cast<double>(b.at(i))));
    return m;
}

// Largest singular value via cyclic Jacobi diagonalization of W^T W.
inline double svd_sigma_max(const uqtf::Tensor<double>& w) {
    const int64_t m = w.dim(0), n = w.dim(1);
    std::vector<double> g(static_cast<size_t>(n * n), 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0;
            for (int64_t p = 0; p < m; ++p) acc += w.at(p * n + i) * w.at(p * n + j);
            g[static_cast<size_t>(i * n + j)] = acc;
        }
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0;
        for (int64_t i = 0; i < n; ++i)
            for (int64_t j = i + 1; j < n; ++j) off += std::abs(g[static_cast<size_t>(i * n + j)]);
        if (off < 1e-14) break;
        for (int64_t p = 0; p < n; ++p)
            for (int64_t q = p + 1; q < n; ++q) {
                const double apq = g[static_cast<size_t>(p * n + q)];
                if (std::abs(apq) < 1e-18) continue;
                const double app = g[static_cast<size_t>(p * n + p)];
                const double aqq = g[static_cast<size_t>(q * n + q)];
                const double theta = 0.5 * std::atan2(2 * apq, aqq - app);
                const double c = std::cos(theta), s = std::sin(theta);
                for (int64_t k = 0; k < n; ++k) {
                    const double akp = g[static_cast<size_t>(k * n + p)];
                    const double akq = g[static_cast<size_t>(k * n + q)];
                    g[static_cast<size_t>(k * n + p)] = c * akp - s * akq;
                    g[static_cast<size_t>(k * n + q)] = s * akp + c * akq;
                }
                for (int64_t k = 0; k < n; ++k) {
                    const double apk = g[static_cast<size_t>(p * n + k)];
                    const double aqk = g[static_cast<size_t>(q * n + k)];
                    g[static_cast<size_t>(p * n + k)] = c * apk - s * aqk;
                    g[static_cast<size_t>(q * n + k)] = s * apk + c * aqk;
                }
            }
    }
    double mx = 0;
    for (int64_t i = 0; i < n; ++i) mx = std::max(mx, g[static_cast<size_t>(i * n + i)]);
    return std::sqrt(std::max(0.0, mx));
}

}  // namespace testutil
