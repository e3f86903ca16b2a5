#pragma once

// In-place finite-difference check of a model's parameter gradients against
// the tape. Components are subsampled per tensor; the SN scale is frozen
// during the sweep so the c/lambda factor stays a constant, matching the
// backward rule.

#include <random>
#include <unordered_set>

#include "uqtf/model.hpp"

namespace testutil {

template <typename S>
double cross_entropy_loss(uqtf::Model<S>& model, const uqtf::Tensor<S>& batch,
                          const std::vector<int>& labels, uqtf::SnMode sn_mode,
                          bool track_grads) {
    auto ctx = model.make_ctx(true, track_grads);
    ctx.sn_mode = sn_mode;
    auto out = model.forward(ctx, batch);
    auto loss = uqtf::ad::cross_entropy(out.logits, labels);
    if (track_grads) {
        uqtf::ad::backward(loss);
        ctx.harvest();
    }
    return static_cast<double>(loss->value.item());
}

// Returns the max relative error over sampled parameter components.
// Parameters are jittered first so the check runs at a generic point:
// zero-initialized biases meeting exactly-zero activations put ReLU
// preactivations on the kink, where two-sided differences disagree with
// every subgradient choice.
template <typename S>
double model_grad_check(uqtf::Model<S>& model, const uqtf::Tensor<S>& batch,
                        const std::vector<int>& labels, double eps,
                        int64_t samples_per_tensor, uint64_t seed) {
    static_assert(std::is_same_v<S, double>);
    {
        std::mt19937_64 jrng(seed ^ 0x717755ULL);
        std::uniform_real_distribution<double> jd(-0.03, 0.03);
        for (auto& p : model.store.params())
            for (int64_t i = 0; i < p->value.numel(); ++i) p->value.at(i) += jd(jrng);
    }
    // one eval-precision pass to cache SN scales, then freeze them
    {
        auto ctx = model.make_ctx(false, false);
        model.forward(ctx, batch);
    }
    model.store.zero_grads();
    cross_entropy_loss(model, batch, labels, uqtf::SnMode::frozen, true);

    std::mt19937_64 rng(seed);
    double max_rel = 0;
    for (auto& p : model.store.params()) {
        const int64_t n = p->value.numel();
        std::vector<int64_t> idx;
        if (samples_per_tensor > 0 && n > samples_per_tensor) {
            std::uniform_int_distribution<int64_t> ui(0, n - 1);
            std::unordered_set<int64_t> seen;
            while (static_cast<int64_t>(idx.size()) < samples_per_tensor) {
                const int64_t i = ui(rng);
                if (seen.insert(i).second) idx.push_back(i);
            }
        } else {
            for (int64_t i = 0; i < n; ++i) idx.push_back(i);
        }
        for (int64_t i : idx) {
            const double orig = static_cast<double>(p->value.at(i));
            const double h = eps * std::max(1.0, std::abs(orig));
            p->value.at(i) = static_cast<S>(orig + h);
            const double fp =
                cross_entropy_loss(model, batch, labels, uqtf::SnMode::frozen, false);
            p->value.at(i) = static_cast<S>(orig - h);
            const double fm =
                cross_entropy_loss(model, batch, labels, uqtf::SnMode::frozen, false);
            p->value.at(i) = static_cast<S>(orig);
            const double numeric = (fp - fm) / (2 * h);
            const double analytic = static_cast<double>(p->grad.at(i));
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            max_rel = std::max(max_rel, rel);
        }
    }
    return max_rel;
}

}  // namespace testutil
