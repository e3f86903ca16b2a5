#pragma once

// Central finite-difference gradient verification. The map under test may
// return any shape; its output is contracted against a fixed pseudo-random
// weighting so every output component participates in the scalar probe.

#include <functional>
#include <random>

#include "uqtf/autodiff.hpp"

namespace uqtf::ad {

template <typename S>
Tensor<S> fixed_probe_weights(const Shape& shape) {
    Tensor<S> w(shape);
    std::mt19937_64 rng(0x9e3779b9ULL);
    std::uniform_real_distribution<double> ud(-1.0, 1.0);
    for (int64_t i = 0; i < w.numel(); ++i) w.mutable_data()[i] = static_cast<S>(ud(rng));
    return w;
}

template <typename S>
double probe_scalar(const NodeP<S>& y, const Tensor<S>& w) {
    double acc = 0;
    for (int64_t i = 0; i < y->value.numel(); ++i)
        acc += static_cast<double>(y->value.at(i)) * static_cast<double>(w.at(i));
    return acc;
}

// Max over components of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
// with central differences of step eps * max(1, |x_i|).
template <typename S>
double grad_check(const std::function<NodeP<S>(const NodeP<S>&)>& f, const Tensor<S>& x,
                  double eps) {
    static_assert(std::is_same_v<S, double>, "grad_check runs at 64-bit");
    if (eps < 1e-6 || eps > 1e-3)
        throw ContractError("grad_check: eps must be in [1e-6, 1e-3]");

    auto x0 = leaf(x.clone(), true);
    auto y0 = f(x0);
    Tensor<S> w = fixed_probe_weights<S>(y0->value.shape());

    // scalarized objective
    auto loss = sum_all(mul(y0, constant(w)));
    backward(loss);
    if (!x0->grad.defined()) x0->ensure_grad();
    Tensor<S> analytic = x0->grad;
    if (!analytic.all_finite()) throw NumericError("grad_check: NaN in analytic gradient");

    double max_rel = 0;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double h = eps * std::max(1.0, std::abs(static_cast<double>(x.at(i))));
        Tensor<S> xp = x.clone();
        xp.at(i) += static_cast<S>(h);
        Tensor<S> xm = x.clone();
        xm.at(i) -= static_cast<S>(h);
        const double fp = probe_scalar(f(leaf(xp, false)), w);
        const double fm = probe_scalar(f(leaf(xm, false)), w);
        const double numeric = (fp - fm) / (2 * h);
        if (!std::isfinite(numeric)) throw NumericError("grad_check: NaN in numeric gradient");
        const double a = static_cast<double>(analytic.at(i));
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

// Gradient check of a scalar loss against several input tensors at once
// (model parameters). Components are subsampled per tensor when large.
template <typename S>
double grad_check_multi(
    const std::function<NodeP<S>(const std::vector<NodeP<S>>&)>& build_loss,
    const std::vector<Tensor<S>>& xs, double eps, int64_t max_components_per_tensor = 0,
    uint64_t seed = 7) {
    static_assert(std::is_same_v<S, double>);
    if (eps < 1e-6 || eps > 1e-3)
        throw ContractError("grad_check_multi: eps must be in [1e-6, 1e-3]");

    auto eval_at = [&](const std::vector<Tensor<S>>& vals, bool track) {
        std::vector<NodeP<S>> leaves;
        leaves.reserve(vals.size());
        for (const auto& v : vals) leaves.push_back(leaf(v.clone(), track));
        auto loss = build_loss(leaves);
        if (loss->value.numel() != 1) throw ContractError("grad_check_multi: loss must be scalar");
        return std::make_pair(loss, leaves);
    };

    auto [loss, leaves] = eval_at(xs, true);
    backward(loss);

    std::mt19937_64 rng(seed);
    double max_rel = 0;
    for (size_t k = 0; k < xs.size(); ++k) {
        Tensor<S> analytic =
            leaves[k]->grad.defined() ? leaves[k]->grad : Tensor<S>::zeros(xs[k].shape());
        if (!analytic.all_finite()) throw NumericError("grad_check_multi: NaN in analytic grad");

        std::vector<int64_t> idx;
        const int64_t n = xs[k].numel();
        if (max_components_per_tensor > 0 && n > max_components_per_tensor) {
            std::uniform_int_distribution<int64_t> ui(0, n - 1);
            std::unordered_set<int64_t> seen;
            while (static_cast<int64_t>(idx.size()) < max_components_per_tensor) {
                int64_t i = ui(rng);
                if (seen.insert(i).second) idx.push_back(i);
            }
        } else {
            idx.resize(static_cast<size_t>(n));
            for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
        }

        for (int64_t i : idx) {
            const double h = eps * std::max(1.0, std::abs(static_cast<double>(xs[k].at(i))));
            std::vector<Tensor<S>> vp = xs;
            vp[k] = xs[k].clone();
            vp[k].at(i) += static_cast<S>(h);
            std::vector<Tensor<S>> vm = xs;
            vm[k] = xs[k].clone();
            vm[k].at(i) -= static_cast<S>(h);
            const double fp = static_cast<double>(eval_at(vp, false).first->value.item());
            const double fm = static_cast<double>(eval_at(vm, false).first->value.item());
            const double numeric = (fp - fm) / (2 * h);
            if (!std::isfinite(numeric))
                throw NumericError("grad_check_multi: NaN in numeric gradient");
            const double a = static_cast<double>(analytic.at(i));
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace uqtf::ad
