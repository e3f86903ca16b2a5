#pragma once

// Per-channel batch normalization over (B, T, V) with learned scale/shift and
// running statistics (epsilon 1e-5, momentum 0.1). Training mode normalizes
// with batch statistics and updates the running buffers in place; eval mode
// reads the buffers.

#include <cmath>

#include "uqtf/autodiff.hpp"
#include "uqtf/params.hpp"

namespace uqtf::ad {

template <typename S>
NodeP<S> batch_norm(const NodeP<S>& x, const NodeP<S>& gamma, const NodeP<S>& beta,
                    Tensor<S>* running_mean, Tensor<S>* running_var, bool training,
                    S momentum = S(0.1), S eps = S(1e-5)) {
    expect_rank4(x->value, "batch_norm");
    const int64_t B = x->value.dim(0), C = x->value.dim(1), T = x->value.dim(2),
                  V = x->value.dim(3);
    const int64_t N = B * T * V;  // elements per channel
    const int64_t TV = T * V;
    if (gamma->value.numel() != C || beta->value.numel() != C)
        throw ShapeError("batch_norm: scale/shift must have one entry per channel");

    auto xhat = std::make_shared<Tensor<S>>(x->value.shape());
    auto invstd = std::make_shared<Tensor<S>>(Shape{C});
    const S* xp = x->value.data();
    S* hp = xhat->mutable_data();

#pragma omp parallel for
    for (int64_t c = 0; c < C; ++c) {
        double mean, var;
        if (training) {
            double acc = 0;
            for (int64_t b = 0; b < B; ++b) {
                const S* row = xp + (b * C + c) * TV;
                for (int64_t i = 0; i < TV; ++i) acc += static_cast<double>(row[i]);
            }
            mean = acc / static_cast<double>(N);
            double vacc = 0;
            for (int64_t b = 0; b < B; ++b) {
                const S* row = xp + (b * C + c) * TV;
                for (int64_t i = 0; i < TV; ++i) {
                    const double d = static_cast<double>(row[i]) - mean;
                    vacc += d * d;
                }
            }
            var = vacc / static_cast<double>(N);
            if (running_mean && running_var) {
                running_mean->mutable_data()[c] = static_cast<S>(
                    (1.0 - static_cast<double>(momentum)) *
                        static_cast<double>(running_mean->data()[c]) +
                    static_cast<double>(momentum) * mean);
                running_var->mutable_data()[c] = static_cast<S>(
                    (1.0 - static_cast<double>(momentum)) *
                        static_cast<double>(running_var->data()[c]) +
                    static_cast<double>(momentum) * var);
            }
        } else {
            mean = static_cast<double>(running_mean->data()[c]);
            var = static_cast<double>(running_var->data()[c]);
        }
        const S istd = static_cast<S>(1.0 / std::sqrt(var + static_cast<double>(eps)));
        invstd->mutable_data()[c] = istd;
        const S mu = static_cast<S>(mean);
        for (int64_t b = 0; b < B; ++b) {
            const S* row = xp + (b * C + c) * TV;
            S* out = hp + (b * C + c) * TV;
            for (int64_t i = 0; i < TV; ++i) out[i] = (row[i] - mu) * istd;
        }
    }

    Tensor<S> out(x->value.shape());
    const S* gp = gamma->value.data();
    const S* bp = beta->value.data();
    S* op = out.mutable_data();
#pragma omp parallel for
    for (int64_t c = 0; c < C; ++c)
        for (int64_t b = 0; b < B; ++b) {
            const S* h = hp + (b * C + c) * TV;
            S* o = op + (b * C + c) * TV;
            for (int64_t i = 0; i < TV; ++i) o[i] = gp[c] * h[i] + bp[c];
        }

    return make_op<S>(std::move(out), {x, gamma, beta},
                      [B, C, TV, N, training, xhat, invstd](Node<S>& self) {
                          const S* g = self.grad.data();
                          const S* hp = xhat->data();
                          const auto& xn = self.parents[0];
                          const auto& gn = self.parents[1];
                          const auto& bn = self.parents[2];
                          const S* gamma = gn->value.data();

                          if (gn->requires_grad || bn->requires_grad) {
                              S* dg = gn->requires_grad ? gn->ensure_grad().mutable_data() : nullptr;
                              S* db = bn->requires_grad ? bn->ensure_grad().mutable_data() : nullptr;
#pragma omp parallel for
                              for (int64_t c = 0; c < C; ++c) {
                                  double sg = 0, sb = 0;
                                  for (int64_t b = 0; b < B; ++b) {
                                      const S* gr = g + (b * C + c) * TV;
                                      const S* h = hp + (b * C + c) * TV;
                                      for (int64_t i = 0; i < TV; ++i) {
                                          sg += static_cast<double>(gr[i]) * static_cast<double>(h[i]);
                                          sb += static_cast<double>(gr[i]);
                                      }
                                  }
                                  if (dg) dg[c] += static_cast<S>(sg);
                                  if (db) db[c] += static_cast<S>(sb);
                              }
                          }
                          if (!xn->requires_grad) return;
                          S* dx = xn->ensure_grad().mutable_data();
#pragma omp parallel for
                          for (int64_t c = 0; c < C; ++c) {
                              const S istd = invstd->data()[c];
                              if (training) {
                                  // dx = istd/N * (N*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
                                  double s1 = 0, s2 = 0;
                                  for (int64_t b = 0; b < B; ++b) {
                                      const S* gr = g + (b * C + c) * TV;
                                      const S* h = hp + (b * C + c) * TV;
                                      for (int64_t i = 0; i < TV; ++i) {
                                          const double dh =
                                              static_cast<double>(gr[i]) * static_cast<double>(gamma[c]);
                                          s1 += dh;
                                          s2 += dh * static_cast<double>(h[i]);
                                      }
                                  }
                                  const double inv_n = 1.0 / static_cast<double>(N);
                                  for (int64_t b = 0; b < B; ++b) {
                                      const S* gr = g + (b * C + c) * TV;
                                      const S* h = hp + (b * C + c) * TV;
                                      S* dd = dx + (b * C + c) * TV;
                                      for (int64_t i = 0; i < TV; ++i) {
                                          const double dh =
                                              static_cast<double>(gr[i]) * static_cast<double>(gamma[c]);
                                          dd[i] += static_cast<S>(
                                              static_cast<double>(istd) *
                                              (dh - inv_n * s1 - static_cast<double>(h[i]) * inv_n * s2));
                                      }
                                  }
                              } else {
                                  const S k = gamma[c] * istd;
                                  for (int64_t b = 0; b < B; ++b) {
                                      const S* gr = g + (b * C + c) * TV;
                                      S* dd = dx + (b * C + c) * TV;
                                      for (int64_t i = 0; i < TV; ++i) dd[i] += k * gr[i];
                                  }
                              }
                          }
                      },
                      "batch_norm");
}

}  // namespace uqtf::ad

namespace uqtf {

template <typename S>
struct BatchNorm {
    Parameter<S>* gamma = nullptr;
    Parameter<S>* beta = nullptr;
    Tensor<S>* running_mean = nullptr;
    Tensor<S>* running_var = nullptr;

    static BatchNorm create(ParameterStore<S>& store, const std::string& prefix, int64_t channels) {
        BatchNorm bn;
        bn.gamma = &store.add(prefix + ".gamma", {channels});
        bn.beta = &store.add(prefix + ".beta", {channels});
        std::fill(bn.gamma->value.mutable_data(), bn.gamma->value.mutable_data() + channels, S(1));
        bn.running_mean = &store.add_buffer(prefix + ".running_mean", {channels});
        bn.running_var = &store.add_buffer(prefix + ".running_var", {channels});
        std::fill(bn.running_var->mutable_data(), bn.running_var->mutable_data() + channels, S(1));
        return bn;
    }

    ad::NodeP<S> operator()(TapeCtx<S>& ctx, const ad::NodeP<S>& x) const {
        return ad::batch_norm(x, ctx.use(gamma), ctx.use(beta), running_mean, running_var,
                              ctx.training);
    }
};

}  // namespace uqtf
