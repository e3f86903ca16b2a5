#pragma once

// Spectral-norm machinery: power iteration with persistent singular-vector
// estimates, the c/lambda weight rescaling applied to residual-branch
// weights, and empirical Lipschitz probes over sampled input pairs.

#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "uqtf/kernels.hpp"
#include "uqtf/tensor.hpp"

namespace uqtf::spectral {

template <typename S>
struct SNState {
    Tensor<S> u;          // left singular-vector estimate, length rows
    Tensor<S> v;          // right singular-vector estimate, length cols
    S cached_scale = S(1);  // last applied c/lambda factor (1 when unconstrained)
    S cached_lambda = S(0);

    bool initialized() const { return u.defined() && v.defined(); }
};

template <typename S>
void seed_sn_state(SNState<S>& st, int64_t rows, int64_t cols, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    st.u = Tensor<S>({rows});
    st.v = Tensor<S>({cols});
    double nu = 0, nv = 0;
    for (int64_t i = 0; i < rows; ++i) {
        const double x = nd(rng);
        st.u.mutable_data()[i] = static_cast<S>(x);
        nu += x * x;
    }
    for (int64_t i = 0; i < cols; ++i) {
        const double x = nd(rng);
        st.v.mutable_data()[i] = static_cast<S>(x);
        nv += x * x;
    }
    nu = std::sqrt(nu);
    nv = std::sqrt(nv);
    for (int64_t i = 0; i < rows; ++i) st.u.mutable_data()[i] /= static_cast<S>(nu);
    for (int64_t i = 0; i < cols; ++i) st.v.mutable_data()[i] /= static_cast<S>(nv);
}

template <typename S>
S norm2(const S* p, int64_t n) {
    double acc = 0;
    for (int64_t i = 0; i < n; ++i) acc += static_cast<double>(p[i]) * static_cast<double>(p[i]);
    return static_cast<S>(std::sqrt(acc));
}

// Power iteration u <- Wv/|Wv|, v <- W^T u/|W^T u|; lambda = u^T W v.
// Stops after `iters` rounds or when the lambda estimate moves by less than
// `tol` relative. A zero matrix yields lambda = 0 with u, v left as given.
template <typename S>
S power_iteration(const Tensor<S>& w, SNState<S>& st, int iters, double tol) {
    if (w.rank() != 2) throw ShapeError("power_iteration: expected a matrix");
    if (iters < 1) throw ContractError("power_iteration: iters must be >= 1");
    const int64_t m = w.dim(0), n = w.dim(1);
    if (!st.initialized() || st.u.numel() != m || st.v.numel() != n)
        seed_sn_state(st, m, n, 0x5eedULL ^ (static_cast<uint64_t>(m) << 32) ^
                                    static_cast<uint64_t>(n));
    std::vector<S> wu(static_cast<size_t>(m)), wv(static_cast<size_t>(n));
    S lambda = S(0);
    for (int it = 0; it < iters; ++it) {
        // u = W v / |W v|
        kern::matmul(w.data(), st.v.data(), wu.data(), m, n, 1);
        const S nu = norm2(wu.data(), m);
        if (nu == S(0)) {
            st.cached_lambda = S(0);
            return S(0);
        }
        for (int64_t i = 0; i < m; ++i) st.u.mutable_data()[i] = wu[static_cast<size_t>(i)] / nu;
        // v = W^T u / |W^T u|
        kern::matmul_tn(w.data(), st.u.data(), wv.data(), m, n, 1);
        const S nv = norm2(wv.data(), n);
        if (nv == S(0)) {
            st.cached_lambda = S(0);
            return S(0);
        }
        for (int64_t i = 0; i < n; ++i) st.v.mutable_data()[i] = wv[static_cast<size_t>(i)] / nv;
        // lambda = u^T W v
        kern::matmul(w.data(), st.v.data(), wu.data(), m, n, 1);
        S est = S(0);
        for (int64_t i = 0; i < m; ++i) est += st.u.data()[i] * wu[static_cast<size_t>(i)];
        if (it > 0 && tol > 0 &&
            std::abs(static_cast<double>(est - lambda)) <=
                tol * std::max(1.0, std::abs(static_cast<double>(est)))) {
            lambda = est;
            break;
        }
        lambda = est;
    }
    st.cached_lambda = lambda;
    return lambda;
}

// Convenience wrapper matching the probe-time precision defaults.
template <typename S>
S spectral_norm(const Tensor<S>& w, int iters = 50, double tol = 1e-6) {
    SNState<S> st;
    return power_iteration(w, st, iters, tol);
}

// W_sn = W * c/lambda when c < lambda, W otherwise.
template <typename S>
Tensor<S> apply_sn(const Tensor<S>& w, S c, SNState<S>& st, int iters = 50, double tol = 1e-6) {
    if (c <= S(0)) throw ConfigError("apply_sn: coefficient c must be positive");
    const S lambda = power_iteration(w, st, iters, tol);
    if (c >= lambda) {
        st.cached_scale = S(1);
        return w;
    }
    st.cached_scale = c / lambda;
    Tensor<S> out(w.shape());
    const S* wp = w.data();
    S* op = out.mutable_data();
    const S s = st.cached_scale;
    for (int64_t i = 0; i < w.numel(); ++i) op[i] = wp[i] * s;
    return out;
}

// Residual branch r(x) = ReLU(W_sn x + b) evaluated on a column vector,
// with the spectral constraint applied at probe-time precision.
template <typename S>
Tensor<S> sn_residual_eval(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, S c) {
    SNState<S> st;
    Tensor<S> wsn = apply_sn(w, c, st);
    const int64_t m = wsn.dim(0), n = wsn.dim(1);
    if (x.numel() != n) throw ShapeError("sn_residual_eval: input length mismatch");
    Tensor<S> out({m});
    kern::matmul(wsn.data(), x.data(), out.mutable_data(), m, n, 1);
    for (int64_t i = 0; i < m; ++i) {
        S v = out.at(i) + (b.defined() ? b.at(i) : S(0));
        out.at(i) = v > S(0) ? v : S(0);
    }
    return out;
}

struct ProbeReport {
    std::string layer;
    double c = 0;  // configured bound; 0 means unconstrained
    double ratio_min = 0;
    double ratio_max = 0;
    int pairs = 0;
    int violations = 0;  // ratios above c + 1e-3, only counted when c > 0
};

template <typename S>
double flat_dist(const Tensor<S>& a, const Tensor<S>& b) {
    double acc = 0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double d = static_cast<double>(a.at(i)) - static_cast<double>(b.at(i));
        acc += d * d;
    }
    return std::sqrt(acc);
}

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Empirical Lipschitz ratios over sampled pairs: half fully random pairs,
// half small perturbations of a random base point. Each pair derives its own
// RNG from (seed, pair index), so the report is thread-count independent.
template <typename S>
ProbeReport lipschitz_probe(const std::function<Tensor<S>(const Tensor<S>&)>& layer,
                            const std::function<Tensor<S>(std::mt19937_64&)>& sampler, int pairs,
                            double c = 0, const std::string& name = "layer",
                            uint64_t seed = 1234) {
    if (pairs < 100) throw ContractError("lipschitz_probe: pairs must be >= 100");
    std::vector<double> ratios(static_cast<size_t>(pairs), -1.0);
#pragma omp parallel for
    for (int i = 0; i < pairs; ++i) {
        std::mt19937_64 rng(splitmix64(seed + static_cast<uint64_t>(i)));
        Tensor<S> x1 = sampler(rng);
        Tensor<S> x2;
        if (i % 2 == 0) {
            x2 = sampler(rng);
        } else {
            x2 = x1.clone();
            std::normal_distribution<double> nd(0.0, 1.0);
            for (int64_t k = 0; k < x2.numel(); ++k)
                x2.at(k) += static_cast<S>(1e-3 * nd(rng));
        }
        const double dx = flat_dist(x1, x2);
        if (dx == 0) continue;  // identical pair, skipped
        const double dy = flat_dist(layer(x1), layer(x2));
        ratios[static_cast<size_t>(i)] = dy / dx;
    }
    ProbeReport rep;
    rep.layer = name;
    rep.c = c;
    rep.ratio_min = std::numeric_limits<double>::infinity();
    rep.ratio_max = 0;
    for (double r : ratios) {
        if (r < 0) continue;
        ++rep.pairs;
        rep.ratio_min = std::min(rep.ratio_min, r);
        rep.ratio_max = std::max(rep.ratio_max, r);
        if (c > 0 && r > c + 1e-3) ++rep.violations;
    }
    if (rep.pairs == 0) rep.ratio_min = 0;
    return rep;
}

// Directed probe for a ReLU(Wx+b) branch. On top of random pairs it walks
// base points whose active-unit mask is held fixed while perturbing along the
// dominant singular direction of the masked matrix, which tightens the
// empirical lower bound toward the true branch constant.
template <typename S>
ProbeReport probe_affine_relu_branch(const Tensor<S>& w, const Tensor<S>& b, double c, int pairs,
                                     const std::string& name = "residual",
                                     uint64_t seed = 99) {
    const int64_t m = w.dim(0), n = w.dim(1);
    auto layer = [&w, &b](const Tensor<S>& x) {
        Tensor<S> y({w.dim(0)});
        kern::matmul(w.data(), x.data(), y.mutable_data(), w.dim(0), w.dim(1), 1);
        for (int64_t i = 0; i < y.numel(); ++i) {
            S v = y.at(i) + (b.defined() ? b.at(i) : S(0));
            y.at(i) = v > S(0) ? v : S(0);
        }
        return y;
    };
    auto sampler = [n](std::mt19937_64& rng) {
        std::normal_distribution<double> nd(0.0, 1.0);
        Tensor<S> x({n});
        for (int64_t i = 0; i < n; ++i) x.at(i) = static_cast<S>(nd(rng));
        return x;
    };
    ProbeReport rep = lipschitz_probe<S>(layer, sampler, pairs, c, name, seed);

    // directed pairs: fix the sign pattern reached from a random base point,
    // then perturb along the top singular vector of diag(mask) * W
    const int directed = 32;
    for (int d = 0; d < directed; ++d) {
        std::mt19937_64 rng(splitmix64(seed * 31 + static_cast<uint64_t>(d)));
        std::normal_distribution<double> nd(0.0, 1.0);
        Tensor<S> base({n});
        const double amp = (d % 2 == 0) ? 1.0 : 10.0;
        for (int64_t i = 0; i < n; ++i) base.at(i) = static_cast<S>(amp * nd(rng));
        Tensor<S> pre({m});
        kern::matmul(w.data(), base.data(), pre.mutable_data(), m, n, 1);
        Tensor<S> wm({m, n});
        for (int64_t i = 0; i < m; ++i) {
            const bool active = pre.at(i) + (b.defined() ? b.at(i) : S(0)) > S(0);
            for (int64_t j = 0; j < n; ++j)
                wm.at(i * n + j) = active ? w.at(i * n + j) : S(0);
        }
        SNState<S> st;
        power_iteration(wm, st, 50, 1e-8);
        Tensor<S> x2 = base.clone();
        for (int64_t j = 0; j < n; ++j) x2.at(j) += static_cast<S>(1e-4) * st.v.at(j);
        const double dx = flat_dist(base, x2);
        if (dx == 0) continue;
        const double r = flat_dist(layer(base), layer(x2)) / dx;
        ++rep.pairs;
        rep.ratio_min = std::min(rep.ratio_min, r);
        rep.ratio_max = std::max(rep.ratio_max, r);
        if (c > 0 && r > c + 1e-3) ++rep.violations;
    }
    return rep;
}

}  // namespace uqtf::spectral
