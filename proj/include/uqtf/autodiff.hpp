#pragma once

// Reverse-mode autodiff on a dynamic tape. Each forward op builds a Node
// holding its value, its parents and a pull-style backward rule; backward()
// topologically sorts the tape and accumulates vector-Jacobian products into
// parent gradients. One tape is single-threaded; independent tapes share no
// mutable state. Kernels inside an op are OpenMP-parallel over outputs, so a
// given tape evaluates bitwise identically for any thread count.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <random>
#include <unordered_set>
#include <vector>

#include "uqtf/kernels.hpp"
#include "uqtf/tensor.hpp"

namespace uqtf::ad {

inline bool& finite_checks() {
    static bool enabled = true;
    return enabled;
}

template <typename S>
struct Node {
    Tensor<S> value;
    Tensor<S> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node<S>>> parents;
    std::function<void(Node<S>&)> backward_rule;

    Tensor<S>& ensure_grad() {
        if (!grad.defined()) grad = Tensor<S>::zeros(value.shape());
        return grad;
    }
};

template <typename S>
using NodeP = std::shared_ptr<Node<S>>;

template <typename S>
NodeP<S> leaf(Tensor<S> value, bool requires_grad = true) {
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

template <typename S>
NodeP<S> constant(Tensor<S> value) {
    return leaf(std::move(value), false);
}

template <typename S>
NodeP<S> make_op(Tensor<S> value, std::vector<NodeP<S>> parents,
                 std::function<void(Node<S>&)> backward_rule, const char* name) {
    if (finite_checks()) check_finite(value, name);
    auto n = std::make_shared<Node<S>>();
    n->value = std::move(value);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backward_rule = std::move(backward_rule);
    return n;
}

// y += alpha * x
template <typename S>
void accumulate(Tensor<S>& y, const Tensor<S>& x, S alpha = S(1)) {
    S* yp = y.mutable_data();
    const S* xp = x.data();
    const int64_t n = y.numel();
#pragma omp parallel for
    for (int64_t i = 0; i < n; ++i) yp[i] += alpha * xp[i];
}

template <typename S>
void backward(const NodeP<S>& loss) {
    if (loss->value.numel() != 1)
        throw ContractError("backward() requires a scalar loss, got " +
                            shape_str(loss->value.shape()));
    if (!std::isfinite(static_cast<double>(loss->value.item())))
        throw NumericError("backward() on non-finite loss");

    // iterative post-order DFS
    std::vector<Node<S>*> order;
    std::unordered_set<Node<S>*> visited;
    std::vector<std::pair<Node<S>*, size_t>> stack;
    stack.emplace_back(loss.get(), 0);
    visited.insert(loss.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node<S>* p = node->parents[next++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    loss->ensure_grad().mutable_data()[0] = S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node<S>* n = *it;
        if (n->backward_rule && n->grad.defined()) n->backward_rule(*n);
    }
}

// ---------------------------------------------------------------------------
// elementwise helpers

template <typename S, typename F>
Tensor<S> map_tensor(const Tensor<S>& a, F f) {
    Tensor<S> out(a.shape());
    const S* ap = a.data();
    S* op = out.mutable_data();
    const int64_t n = a.numel();
#pragma omp parallel for
    for (int64_t i = 0; i < n; ++i) op[i] = f(ap[i]);
    return out;
}

// ---------------------------------------------------------------------------
// basic ops

template <typename S>
NodeP<S> add(const NodeP<S>& a, const NodeP<S>& b) {
    if (a->value.shape() != b->value.shape())
        throw ShapeError("add: shape mismatch " + shape_str(a->value.shape()) + " vs " +
                         shape_str(b->value.shape()));
    Tensor<S> out(a->value.shape());
    const S* ap = a->value.data();
    const S* bp = b->value.data();
    S* op = out.mutable_data();
    const int64_t n = out.numel();
#pragma omp parallel for
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] + bp[i];
    return make_op<S>(std::move(out), {a, b},
                      [](Node<S>& self) {
                          for (int k = 0; k < 2; ++k)
                              if (self.parents[k]->requires_grad)
                                  accumulate(self.parents[k]->ensure_grad(), self.grad);
                      },
                      "add");
}

template <typename S>
NodeP<S> mul(const NodeP<S>& a, const NodeP<S>& b) {
    if (a->value.shape() != b->value.shape()) throw ShapeError("mul: shape mismatch");
    Tensor<S> out(a->value.shape());
    const S* ap = a->value.data();
    const S* bp = b->value.data();
    S* op = out.mutable_data();
    const int64_t n = out.numel();
#pragma omp parallel for
    for (int64_t i = 0; i < n; ++i) op[i] = ap[i] * bp[i];
    return make_op<S>(std::move(out), {a, b},
                      [](Node<S>& self) {
                          const int64_t n = self.value.numel();
                          const S* g = self.grad.data();
                          for (int k = 0; k < 2; ++k) {
                              if (!self.parents[k]->requires_grad) continue;
                              const S* other = self.parents[1 - k]->value.data();
                              S* dst = self.parents[k]->ensure_grad().mutable_data();
#pragma omp parallel for
                              for (int64_t i = 0; i < n; ++i) dst[i] += g[i] * other[i];
                          }
                      },
                      "mul");
}

template <typename S>
NodeP<S> scale_const(const NodeP<S>& a, S s) {
    Tensor<S> out = map_tensor(a->value, [s](S v) { return v * s; });
    return make_op<S>(std::move(out), {a},
                      [s](Node<S>& self) {
                          accumulate(self.parents[0]->ensure_grad(), self.grad, s);
                      },
                      "scale_const");
}

template <typename S>
NodeP<S> reshape(const NodeP<S>& a, Shape shape) {
    Tensor<S> out = a->value.reshape(shape);
    return make_op<S>(std::move(out), {a},
                      [](Node<S>& self) {
                          accumulate(self.parents[0]->ensure_grad(),
                                     self.grad.reshape(self.parents[0]->value.shape()));
                      },
                      "reshape");
}

template <typename S>
NodeP<S> relu(const NodeP<S>& a) {
    Tensor<S> out = map_tensor(a->value, [](S v) { return v > S(0) ? v : S(0); });
    return make_op<S>(std::move(out), {a},
                      [](Node<S>& self) {
                          const int64_t n = self.value.numel();
                          const S* x = self.parents[0]->value.data();
                          const S* g = self.grad.data();
                          S* dst = self.parents[0]->ensure_grad().mutable_data();
#pragma omp parallel for
                          for (int64_t i = 0; i < n; ++i)
                              if (x[i] > S(0)) dst[i] += g[i];
                      },
                      "relu");
}

template <typename S>
NodeP<S> tanh_act(const NodeP<S>& a) {
    Tensor<S> out = map_tensor(a->value, [](S v) { return std::tanh(v); });
    return make_op<S>(std::move(out), {a},
                      [](Node<S>& self) {
                          const int64_t n = self.value.numel();
                          const S* y = self.value.data();
                          const S* g = self.grad.data();
                          S* dst = self.parents[0]->ensure_grad().mutable_data();
#pragma omp parallel for
                          for (int64_t i = 0; i < n; ++i) dst[i] += g[i] * (S(1) - y[i] * y[i]);
                      },
                      "tanh");
}

template <typename S>
NodeP<S> matmul(const NodeP<S>& a, const NodeP<S>& b) {
    if (a->value.rank() != 2 || b->value.rank() != 2 || a->value.dim(1) != b->value.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a->value.shape()) + " * " +
                         shape_str(b->value.shape()));
    const int64_t m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
    Tensor<S> out({m, n});
    kern::matmul(a->value.data(), b->value.data(), out.mutable_data(), m, k, n);
    return make_op<S>(std::move(out), {a, b},
                      [m, k, n](Node<S>& self) {
                          const S* g = self.grad.data();
                          if (self.parents[0]->requires_grad) {
                              Tensor<S> da({m, k});
                              kern::matmul_nt(g, self.parents[1]->value.data(), da.mutable_data(),
                                              m, n, k);
                              accumulate(self.parents[0]->ensure_grad(), da);
                          }
                          if (self.parents[1]->requires_grad) {
                              Tensor<S> db({k, n});
                              kern::matmul_tn(self.parents[0]->value.data(), g, db.mutable_data(),
                                              m, k, n);
                              accumulate(self.parents[1]->ensure_grad(), db);
                          }
                      },
                      "matmul");
}

template <typename S>
NodeP<S> sum_all(const NodeP<S>& a) {
    S acc = S(0);
    const S* ap = a->value.data();
    for (int64_t i = 0; i < a->value.numel(); ++i) acc += ap[i];
    return make_op<S>(Tensor<S>::scalar(acc), {a},
                      [](Node<S>& self) {
                          const S g = self.grad.item();
                          Tensor<S>& dst = self.parents[0]->ensure_grad();
                          S* dp = dst.mutable_data();
                          const int64_t n = dst.numel();
#pragma omp parallel for
                          for (int64_t i = 0; i < n; ++i) dp[i] += g;
                      },
                      "sum_all");
}

template <typename S>
NodeP<S> mean_all(const NodeP<S>& a) {
    return scale_const(sum_all(a), S(1) / static_cast<S>(a->value.numel()));
}

// ---------------------------------------------------------------------------
// rank-4 model ops; x is [B x C x T x V]

template <typename S>
void expect_rank4(const Tensor<S>& t, const char* op) {
    if (t.rank() != 4) throw ShapeError(std::string(op) + ": expected rank-4 input, got " +
                                        shape_str(t.shape()));
}

// 1x1 convolution: w [Co x Ci], bias [Co] (optional node)
template <typename S>
NodeP<S> channel_map(const NodeP<S>& x, const NodeP<S>& w, const std::type_identity_t<NodeP<S>>& bias) {
    expect_rank4(x->value, "channel_map");
    const int64_t B = x->value.dim(0), Ci = x->value.dim(1), T = x->value.dim(2),
                  V = x->value.dim(3);
    if (w->value.rank() != 2 || w->value.dim(1) != Ci)
        throw ShapeError("channel_map: weight " + shape_str(w->value.shape()) +
                         " does not match input channels " + std::to_string(Ci));
    const int64_t Co = w->value.dim(0);
    Tensor<S> out({B, Co, T, V});
    kern::channel_map(x->value.data(), w->value.data(), bias ? bias->value.data() : nullptr,
                      out.mutable_data(), B, Ci, Co, T * V);
    std::vector<NodeP<S>> parents = {x, w};
    if (bias) parents.push_back(bias);
    return make_op<S>(std::move(out), std::move(parents),
                      [B, Ci, Co, T, V](Node<S>& self) {
                          const S* g = self.grad.data();
                          const auto& x = self.parents[0];
                          const auto& w = self.parents[1];
                          if (x->requires_grad) {
                              Tensor<S> dx(x->value.shape());
                              kern::channel_map_dx(g, w->value.data(), dx.mutable_data(), B, Ci,
                                                   Co, T * V);
                              accumulate(x->ensure_grad(), dx);
                          }
                          const bool has_bias = self.parents.size() == 3;
                          if (w->requires_grad || (has_bias && self.parents[2]->requires_grad)) {
                              Tensor<S> dw(w->value.shape());
                              Tensor<S> db({Co});
                              kern::channel_map_dw(g, x->value.data(), dw.mutable_data(),
                                                   db.mutable_data(), B, Ci, Co, T * V);
                              if (w->requires_grad) accumulate(w->ensure_grad(), dw);
                              if (has_bias && self.parents[2]->requires_grad)
                                  accumulate(self.parents[2]->ensure_grad(), db);
                          }
                      },
                      "channel_map");
}

inline int64_t conv_out_len(int64_t T, int64_t K, int64_t stride, int64_t pad) {
    return (T + 2 * pad - K) / stride + 1;
}

// w [Co x Ci x K]
template <typename S>
NodeP<S> temporal_conv(const NodeP<S>& x, const NodeP<S>& w, const std::type_identity_t<NodeP<S>>& bias, int64_t stride,
                       int64_t pad) {
    expect_rank4(x->value, "temporal_conv");
    const int64_t B = x->value.dim(0), Ci = x->value.dim(1), T = x->value.dim(2),
                  V = x->value.dim(3);
    if (w->value.rank() != 3 || w->value.dim(1) != Ci)
        throw ShapeError("temporal_conv: bad kernel shape " + shape_str(w->value.shape()));
    const int64_t Co = w->value.dim(0), K = w->value.dim(2);
    const int64_t To = conv_out_len(T, K, stride, pad);
    if (To < 1)
        throw ShapeError("temporal_conv: degenerate output length for T=" + std::to_string(T) +
                         ", K=" + std::to_string(K));
    Tensor<S> out({B, Co, To, V});
    kern::temporal_conv(x->value.data(), w->value.data(), bias ? bias->value.data() : nullptr,
                        out.mutable_data(), B, Ci, Co, T, V, K, stride, pad, To);
    std::vector<NodeP<S>> parents = {x, w};
    if (bias) parents.push_back(bias);
    return make_op<S>(std::move(out), std::move(parents),
                      [B, Ci, Co, T, V, K, stride, pad, To](Node<S>& self) {
                          const S* g = self.grad.data();
                          const auto& x = self.parents[0];
                          const auto& w = self.parents[1];
                          if (x->requires_grad) {
                              Tensor<S> dx(x->value.shape());
                              kern::temporal_conv_dx(g, w->value.data(), dx.mutable_data(), B, Ci,
                                                     Co, T, V, K, stride, pad, To);
                              accumulate(x->ensure_grad(), dx);
                          }
                          const bool has_bias = self.parents.size() == 3;
                          if (w->requires_grad || (has_bias && self.parents[2]->requires_grad)) {
                              Tensor<S> dw(w->value.shape());
                              Tensor<S> db({Co});
                              kern::temporal_conv_dw(g, x->value.data(), dw.mutable_data(),
                                                     db.mutable_data(), B, Ci, Co, T, V, K, stride,
                                                     pad, To);
                              if (w->requires_grad) accumulate(w->ensure_grad(), dw);
                              if (has_bias && self.parents[2]->requires_grad)
                                  accumulate(self.parents[2]->ensure_grad(), db);
                          }
                      },
                      "temporal_conv");
}

// w [C x K]
template <typename S>
NodeP<S> depthwise_temporal_conv(const NodeP<S>& x, const NodeP<S>& w, const std::type_identity_t<NodeP<S>>& bias,
                                 int64_t stride, int64_t pad) {
    expect_rank4(x->value, "depthwise_temporal_conv");
    const int64_t B = x->value.dim(0), C = x->value.dim(1), T = x->value.dim(2),
                  V = x->value.dim(3);
    if (w->value.rank() != 2 || w->value.dim(0) != C)
        throw ShapeError("depthwise_temporal_conv: bad kernel shape");
    const int64_t K = w->value.dim(1);
    const int64_t To = conv_out_len(T, K, stride, pad);
    if (To < 1) throw ShapeError("depthwise_temporal_conv: degenerate output length");
    Tensor<S> out({B, C, To, V});
    kern::depthwise_temporal_conv(x->value.data(), w->value.data(),
                                  bias ? bias->value.data() : nullptr, out.mutable_data(), B, C, T,
                                  V, K, stride, pad, To);
    std::vector<NodeP<S>> parents = {x, w};
    if (bias) parents.push_back(bias);
    return make_op<S>(std::move(out), std::move(parents),
                      [B, C, T, V, K, stride, pad, To](Node<S>& self) {
                          const S* g = self.grad.data();
                          const auto& x = self.parents[0];
                          const auto& w = self.parents[1];
                          if (x->requires_grad) {
                              Tensor<S> dx(x->value.shape());
                              kern::depthwise_temporal_conv_dx(g, w->value.data(),
                                                               dx.mutable_data(), B, C, T, V, K,
                                                               stride, pad, To);
                              accumulate(x->ensure_grad(), dx);
                          }
                          const bool has_bias = self.parents.size() == 3;
                          if (w->requires_grad || (has_bias && self.parents[2]->requires_grad)) {
                              Tensor<S> dw(w->value.shape());
                              Tensor<S> db({C});
                              kern::depthwise_temporal_conv_dw(g, x->value.data(),
                                                               dw.mutable_data(), db.mutable_data(),
                                                               B, C, T, V, K, stride, pad, To);
                              if (w->requires_grad) accumulate(w->ensure_grad(), dw);
                              if (has_bias && self.parents[2]->requires_grad)
                                  accumulate(self.parents[2]->ensure_grad(), db);
                          }
                      },
                      "depthwise_temporal_conv");
}

// w [C x Kv], no padding, stride along the node axis
template <typename S>
NodeP<S> depthwise_node_conv(const NodeP<S>& x, const NodeP<S>& w, const std::type_identity_t<NodeP<S>>& bias,
                             int64_t stride) {
    expect_rank4(x->value, "depthwise_node_conv");
    const int64_t B = x->value.dim(0), C = x->value.dim(1), T = x->value.dim(2),
                  V = x->value.dim(3);
    if (w->value.rank() != 2 || w->value.dim(0) != C)
        throw ShapeError("depthwise_node_conv: bad kernel shape");
    const int64_t Kv = w->value.dim(1);
    const int64_t Vo = (V - Kv) / stride + 1;
    if (Kv > V || Vo < 1) throw ShapeError("depthwise_node_conv: kernel wider than node axis");
    Tensor<S> out({B, C, T, Vo});
    kern::depthwise_node_conv(x->value.data(), w->value.data(),
                              bias ? bias->value.data() : nullptr, out.mutable_data(), B, C, T, V,
                              Kv, stride, Vo);
    std::vector<NodeP<S>> parents = {x, w};
    if (bias) parents.push_back(bias);
    return make_op<S>(std::move(out), std::move(parents),
                      [B, C, T, V, Kv, stride, Vo](Node<S>& self) {
                          const S* g = self.grad.data();
                          const auto& x = self.parents[0];
                          const auto& w = self.parents[1];
                          if (x->requires_grad) {
                              Tensor<S> dx(x->value.shape());
                              kern::depthwise_node_conv_dx(g, w->value.data(), dx.mutable_data(),
                                                           B, C, T, V, Kv, stride, Vo);
                              accumulate(x->ensure_grad(), dx);
                          }
                          const bool has_bias = self.parents.size() == 3;
                          if (w->requires_grad || (has_bias && self.parents[2]->requires_grad)) {
                              Tensor<S> dw(w->value.shape());
                              Tensor<S> db({C});
                              kern::depthwise_node_conv_dw(g, x->value.data(), dw.mutable_data(),
                                                           db.mutable_data(), B, C, T, V, Kv,
                                                           stride, Vo);
                              if (w->requires_grad) accumulate(w->ensure_grad(), dw);
                              if (has_bias && self.parents[2]->requires_grad)
                                  accumulate(self.parents[2]->ensure_grad(), db);
                          }
                      },
                      "depthwise_node_conv");
}

// y[b,c,t,v] = sum_u x[b,c,t,u] m[b,u,v]; m is [B x V x V]
template <typename S>
NodeP<S> node_mix(const NodeP<S>& x, const NodeP<S>& m) {
    expect_rank4(x->value, "node_mix");
    const int64_t B = x->value.dim(0), C = x->value.dim(1), T = x->value.dim(2),
                  V = x->value.dim(3);
    if (m->value.rank() != 3 || m->value.dim(0) != B || m->value.dim(1) != V ||
        m->value.dim(2) != V)
        throw ShapeError("node_mix: mixing matrix must be [B x V x V], got " +
                         shape_str(m->value.shape()));
    Tensor<S> out({B, C, T, V});
    kern::node_mix(x->value.data(), m->value.data(), out.mutable_data(), B, C, T, V);
    return make_op<S>(std::move(out), {x, m},
                      [B, C, T, V](Node<S>& self) {
                          const S* g = self.grad.data();
                          const auto& x = self.parents[0];
                          const auto& m = self.parents[1];
                          if (x->requires_grad) {
                              Tensor<S> dx(x->value.shape());
                              kern::node_mix_dx(g, m->value.data(), dx.mutable_data(), B, C, T, V);
                              accumulate(x->ensure_grad(), dx);
                          }
                          if (m->requires_grad) {
                              Tensor<S> dm(m->value.shape());
                              kern::node_mix_dm(g, x->value.data(), dm.mutable_data(), B, C, T, V);
                              accumulate(m->ensure_grad(), dm);
                          }
                      },
                      "node_mix");
}

// g[b,i,j] = sum_c p[b,c,i] p[b,c,j]; p is [B x C x V]
template <typename S>
NodeP<S> node_gram(const NodeP<S>& p) {
    if (p->value.rank() != 3) throw ShapeError("node_gram: expected [B x C x V]");
    const int64_t B = p->value.dim(0), C = p->value.dim(1), V = p->value.dim(2);
    Tensor<S> out({B, V, V});
    kern::node_gram(p->value.data(), out.mutable_data(), B, C, V);
    return make_op<S>(std::move(out), {p},
                      [B, C, V](Node<S>& self) {
                          Tensor<S> dp(self.parents[0]->value.shape());
                          kern::node_gram_dp(self.grad.data(), self.parents[0]->value.data(),
                                             dp.mutable_data(), B, C, V);
                          accumulate(self.parents[0]->ensure_grad(), dp);
                      },
                      "node_gram");
}

// mean over the frame axis: [B x C x T x V] -> [B x C x V]
template <typename S>
NodeP<S> time_mean(const NodeP<S>& x) {
    expect_rank4(x->value, "time_mean");
    const int64_t B = x->value.dim(0), C = x->value.dim(1), T = x->value.dim(2),
                  V = x->value.dim(3);
    Tensor<S> out({B, C, V});
    const S* xp = x->value.data();
    S* op = out.mutable_data();
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t v = 0; v < V; ++v) {
                S acc = S(0);
                for (int64_t t = 0; t < T; ++t) acc += xp[((b * C + c) * T + t) * V + v];
                op[(b * C + c) * V + v] = acc / static_cast<S>(T);
            }
    return make_op<S>(std::move(out), {x},
                      [B, C, T, V](Node<S>& self) {
                          const S* g = self.grad.data();
                          S* dst = self.parents[0]->ensure_grad().mutable_data();
                          const S inv = S(1) / static_cast<S>(T);
#pragma omp parallel for collapse(2)
                          for (int64_t b = 0; b < B; ++b)
                              for (int64_t c = 0; c < C; ++c)
                                  for (int64_t t = 0; t < T; ++t)
                                      for (int64_t v = 0; v < V; ++v)
                                          dst[((b * C + c) * T + t) * V + v] +=
                                              g[(b * C + c) * V + v] * inv;
                      },
                      "time_mean");
}

// mean over channels: [B x C x V] -> [B x V]
template <typename S>
NodeP<S> channel_mean(const NodeP<S>& p) {
    if (p->value.rank() != 3) throw ShapeError("channel_mean: expected [B x C x V]");
    const int64_t B = p->value.dim(0), C = p->value.dim(1), V = p->value.dim(2);
    Tensor<S> out({B, V});
    const S* pp = p->value.data();
    S* op = out.mutable_data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t v = 0; v < V; ++v) {
            S acc = S(0);
            for (int64_t c = 0; c < C; ++c) acc += pp[(b * C + c) * V + v];
            op[b * V + v] = acc / static_cast<S>(C);
        }
    return make_op<S>(std::move(out), {p},
                      [B, C, V](Node<S>& self) {
                          const S* g = self.grad.data();
                          S* dst = self.parents[0]->ensure_grad().mutable_data();
                          const S inv = S(1) / static_cast<S>(C);
                          for (int64_t b = 0; b < B; ++b)
                              for (int64_t c = 0; c < C; ++c)
                                  for (int64_t v = 0; v < V; ++v)
                                      dst[(b * C + c) * V + v] += g[b * V + v] * inv;
                      },
                      "channel_mean");
}

// out[b,i,j] = s[b,i] - s[b,j]; s is [B x V]
template <typename S>
NodeP<S> pair_diff(const NodeP<S>& s) {
    if (s->value.rank() != 2) throw ShapeError("pair_diff: expected [B x V]");
    const int64_t B = s->value.dim(0), V = s->value.dim(1);
    Tensor<S> out({B, V, V});
    const S* sp = s->value.data();
    S* op = out.mutable_data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < V; ++i)
            for (int64_t j = 0; j < V; ++j)
                op[(b * V + i) * V + j] = sp[b * V + i] - sp[b * V + j];
    return make_op<S>(std::move(out), {s},
                      [B, V](Node<S>& self) {
                          const S* g = self.grad.data();
                          S* dst = self.parents[0]->ensure_grad().mutable_data();
                          for (int64_t b = 0; b < B; ++b)
                              for (int64_t i = 0; i < V; ++i) {
                                  S acc = S(0);
                                  for (int64_t j = 0; j < V; ++j)
                                      acc += g[(b * V + i) * V + j] - g[(b * V + j) * V + i];
                                  dst[b * V + i] += acc;
                              }
                      },
                      "pair_diff");
}

// out[b,i,j] = gate * att[b,i,j] + a_static[i,j]; gate is a scalar node
template <typename S>
NodeP<S> gated_adjacency(const NodeP<S>& att, const NodeP<S>& gate, const Tensor<S>& a_static) {
    if (att->value.rank() != 3) throw ShapeError("gated_adjacency: expected [B x V x V]");
    const int64_t B = att->value.dim(0), V = att->value.dim(1);
    if (a_static.rank() != 2 || a_static.dim(0) != V || a_static.dim(1) != V)
        throw ShapeError("gated_adjacency: static adjacency must be [V x V]");
    const S gv = gate->value.item();
    Tensor<S> out({B, V, V});
    const S* ap = att->value.data();
    const S* stat = a_static.data();
    S* op = out.mutable_data();
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < V * V; ++i) op[b * V * V + i] = gv * ap[b * V * V + i] + stat[i];
    return make_op<S>(std::move(out), {att, gate},
                      [B, V, gv](Node<S>& self) {
                          const S* g = self.grad.data();
                          const int64_t n = B * V * V;
                          if (self.parents[0]->requires_grad)
                              accumulate(self.parents[0]->ensure_grad(), self.grad, gv);
                          if (self.parents[1]->requires_grad) {
                              const S* av = self.parents[0]->value.data();
                              S acc = S(0);
                              for (int64_t i = 0; i < n; ++i) acc += g[i] * av[i];
                              self.parents[1]->ensure_grad().mutable_data()[0] += acc;
                          }
                      },
                      "gated_adjacency");
}

// softmax over the class axis of [B x n x T] logits
template <typename S>
NodeP<S> softmax_classes(const NodeP<S>& x) {
    if (x->value.rank() != 3) throw ShapeError("softmax_classes: expected [B x n x T]");
    const int64_t B = x->value.dim(0), N = x->value.dim(1), T = x->value.dim(2);
    Tensor<S> out(x->value.shape());
    const S* xp = x->value.data();
    S* op = out.mutable_data();
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < T; ++t) {
            S mx = xp[(b * N) * T + t];
            for (int64_t c = 1; c < N; ++c) mx = std::max(mx, xp[(b * N + c) * T + t]);
            S z = S(0);
            for (int64_t c = 0; c < N; ++c) {
                const S e = std::exp(xp[(b * N + c) * T + t] - mx);
                op[(b * N + c) * T + t] = e;
                z += e;
            }
            for (int64_t c = 0; c < N; ++c) op[(b * N + c) * T + t] /= z;
        }
    return make_op<S>(std::move(out), {x},
                      [B, N, T](Node<S>& self) {
                          const S* y = self.value.data();
                          const S* g = self.grad.data();
                          S* dst = self.parents[0]->ensure_grad().mutable_data();
#pragma omp parallel for collapse(2)
                          for (int64_t b = 0; b < B; ++b)
                              for (int64_t t = 0; t < T; ++t) {
                                  S dot = S(0);
                                  for (int64_t c = 0; c < N; ++c)
                                      dot += g[(b * N + c) * T + t] * y[(b * N + c) * T + t];
                                  for (int64_t c = 0; c < N; ++c)
                                      dst[(b * N + c) * T + t] +=
                                          y[(b * N + c) * T + t] * (g[(b * N + c) * T + t] - dot);
                              }
                      },
                      "softmax_classes");
}

// mean framewise cross-entropy of [B x n x T] logits against integer labels
template <typename S>
NodeP<S> cross_entropy(const NodeP<S>& logits, const std::vector<int>& labels) {
    if (logits->value.rank() != 3) throw ShapeError("cross_entropy: expected [B x n x T]");
    const int64_t B = logits->value.dim(0), N = logits->value.dim(1), T = logits->value.dim(2);
    if (static_cast<int64_t>(labels.size()) != B * T)
        throw ShapeError("cross_entropy: labels length mismatch");
    for (int lbl : labels)
        if (lbl < 0 || lbl >= N)
            throw ContractError("cross_entropy: label out of range: " + std::to_string(lbl));
    const S* xp = logits->value.data();
    // store softmax for the backward rule; per-frame losses reduced serially
    // so the result does not depend on the thread count
    auto probs = std::make_shared<Tensor<S>>(logits->value.shape());
    S* pp = probs->mutable_data();
    std::vector<double> frame_loss(static_cast<size_t>(B * T));
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b)
        for (int64_t t = 0; t < T; ++t) {
            S mx = xp[(b * N) * T + t];
            for (int64_t c = 1; c < N; ++c) mx = std::max(mx, xp[(b * N + c) * T + t]);
            S z = S(0);
            for (int64_t c = 0; c < N; ++c) {
                const S e = std::exp(xp[(b * N + c) * T + t] - mx);
                pp[(b * N + c) * T + t] = e;
                z += e;
            }
            for (int64_t c = 0; c < N; ++c) pp[(b * N + c) * T + t] /= z;
            const int lbl = labels[static_cast<size_t>(b * T + t)];
            const S xl = xp[(b * N + lbl) * T + t];
            frame_loss[static_cast<size_t>(b * T + t)] =
                static_cast<double>(-(xl - mx) + std::log(static_cast<double>(z)));
        }
    double loss = 0.0;
    for (double fl : frame_loss) loss += fl;
    loss /= static_cast<double>(B * T);
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    return make_op<S>(Tensor<S>::scalar(static_cast<S>(loss)), {logits},
                      [B, N, T, probs, labels_copy](Node<S>& self) {
                          const S g = self.grad.item() / static_cast<S>(B * T);
                          const S* pp = probs->data();
                          S* dst = self.parents[0]->ensure_grad().mutable_data();
#pragma omp parallel for collapse(2)
                          for (int64_t b = 0; b < B; ++b)
                              for (int64_t t = 0; t < T; ++t) {
                                  const int lbl = (*labels_copy)[static_cast<size_t>(b * T + t)];
                                  for (int64_t c = 0; c < N; ++c) {
                                      S d = pp[(b * N + c) * T + t];
                                      if (c == lbl) d -= S(1);
                                      dst[(b * N + c) * T + t] += g * d;
                                  }
                              }
                      },
                      "cross_entropy");
}

// ---------------------------------------------------------------------------
// frame-axis shape ops

// Linear interpolation along the frame axis, endpoints mapped to endpoints.
// T_out == T is an exact copy.
template <typename S>
NodeP<S> interpolate_time(const NodeP<S>& x, int64_t t_out) {
    expect_rank4(x->value, "interpolate_time");
    const int64_t B = x->value.dim(0), C = x->value.dim(1), T = x->value.dim(2),
                  V = x->value.dim(3);
    if (t_out < 1) throw ShapeError("interpolate_time: T_out must be >= 1");
    if (t_out == T) {
        return make_op<S>(x->value, {x},
                          [](Node<S>& self) {
                              accumulate(self.parents[0]->ensure_grad(), self.grad);
                          },
                          "interpolate_time");
    }
    // source position of output frame to; index pair (t0, t0+1) with weight w
    std::vector<int64_t> src(static_cast<size_t>(t_out));
    std::vector<S> wgt(static_cast<size_t>(t_out));
    for (int64_t to = 0; to < t_out; ++to) {
        const double pos = (T == 1 || t_out == 1)
                               ? 0.0
                               : static_cast<double>(to) * static_cast<double>(T - 1) /
                                     static_cast<double>(t_out - 1);
        int64_t t0 = static_cast<int64_t>(pos);
        if (t0 > T - 2) t0 = std::max<int64_t>(0, T - 2);
        src[static_cast<size_t>(to)] = t0;
        wgt[static_cast<size_t>(to)] = (T == 1) ? S(0) : static_cast<S>(pos - static_cast<double>(t0));
    }
    Tensor<S> out({B, C, t_out, V});
    const S* xp = x->value.data();
    S* op = out.mutable_data();
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t to = 0; to < t_out; ++to) {
                const int64_t t0 = src[static_cast<size_t>(to)];
                const S w = wgt[static_cast<size_t>(to)];
                const S* x0 = xp + ((b * C + c) * T + t0) * V;
                const S* x1 = (T == 1) ? x0 : x0 + V;
                S* yr = op + ((b * C + c) * t_out + to) * V;
                for (int64_t v = 0; v < V; ++v) yr[v] = (S(1) - w) * x0[v] + w * x1[v];
            }
    return make_op<S>(std::move(out), {x},
                      [B, C, T, t_out, src, wgt](Node<S>& self) {
                          const S* g = self.grad.data();
                          const int64_t V = self.parents[0]->value.dim(3);
                          S* dst = self.parents[0]->ensure_grad().mutable_data();
#pragma omp parallel for collapse(2)
                          for (int64_t b = 0; b < B; ++b)
                              for (int64_t c = 0; c < C; ++c)
                                  for (int64_t to = 0; to < t_out; ++to) {
                                      const int64_t t0 = src[static_cast<size_t>(to)];
                                      const S w = wgt[static_cast<size_t>(to)];
                                      const S* gr = g + ((b * C + c) * t_out + to) * V;
                                      S* d0 = dst + ((b * C + c) * T + t0) * V;
                                      S* d1 = (T == 1) ? d0 : d0 + V;
                                      for (int64_t v = 0; v < V; ++v) {
                                          d0[v] += (S(1) - w) * gr[v];
                                          if (T > 1) d1[v] += w * gr[v];
                                      }
                                  }
                      },
                      "interpolate_time");
}

inline std::pair<int64_t, int64_t> tpp_bin_range(int64_t T, int64_t bins, int64_t i) {
    return {i * T / bins, (i + 1) * T / bins};
}

// Average-pool the frame axis into `bins` bins and broadcast each bin mean
// back over its span. Output has the same shape as the input.
template <typename S>
NodeP<S> tpp_pool_broadcast(const NodeP<S>& x, int64_t bins) {
    expect_rank4(x->value, "tpp_pool_broadcast");
    const int64_t B = x->value.dim(0), C = x->value.dim(1), T = x->value.dim(2),
                  V = x->value.dim(3);
    if (bins < 1 || bins > T)
        throw ConfigError("tpp_pool_broadcast: bins=" + std::to_string(bins) +
                          " out of range for T=" + std::to_string(T));
    Tensor<S> out(x->value.shape());
    const S* xp = x->value.data();
    S* op = out.mutable_data();
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < bins; ++i) {
                const auto [lo, hi] = tpp_bin_range(T, bins, i);
                for (int64_t v = 0; v < V; ++v) {
                    S acc = S(0);
                    for (int64_t t = lo; t < hi; ++t) acc += xp[((b * C + c) * T + t) * V + v];
                    acc /= static_cast<S>(hi - lo);
                    for (int64_t t = lo; t < hi; ++t) op[((b * C + c) * T + t) * V + v] = acc;
                }
            }
    return make_op<S>(std::move(out), {x},
                      [B, C, T, V, bins](Node<S>& self) {
                          const S* g = self.grad.data();
                          S* dst = self.parents[0]->ensure_grad().mutable_data();
#pragma omp parallel for collapse(2)
                          for (int64_t b = 0; b < B; ++b)
                              for (int64_t c = 0; c < C; ++c)
                                  for (int64_t i = 0; i < bins; ++i) {
                                      const auto [lo, hi] = tpp_bin_range(T, bins, i);
                                      const S inv = S(1) / static_cast<S>(hi - lo);
                                      for (int64_t v = 0; v < V; ++v) {
                                          S acc = S(0);
                                          for (int64_t t = lo; t < hi; ++t)
                                              acc += g[((b * C + c) * T + t) * V + v];
                                          acc *= inv;
                                          for (int64_t t = lo; t < hi; ++t)
                                              dst[((b * C + c) * T + t) * V + v] += acc;
                                      }
                                  }
                      },
                      "tpp_pool_broadcast");
}

template <typename S>
NodeP<S> concat_channels(const std::vector<NodeP<S>>& xs) {
    if (xs.empty()) throw ShapeError("concat_channels: empty input list");
    const int64_t B = xs[0]->value.dim(0), T = xs[0]->value.dim(2), V = xs[0]->value.dim(3);
    int64_t Ctot = 0;
    for (const auto& x : xs) {
        expect_rank4(x->value, "concat_channels");
        if (x->value.dim(0) != B || x->value.dim(2) != T || x->value.dim(3) != V)
            throw ShapeError("concat_channels: inconsistent shapes");
        Ctot += x->value.dim(1);
    }
    Tensor<S> out({B, Ctot, T, V});
    S* op = out.mutable_data();
    const int64_t TV = T * V;
    int64_t coff = 0;
    for (const auto& x : xs) {
        const int64_t C = x->value.dim(1);
        const S* xp = x->value.data();
#pragma omp parallel for
        for (int64_t b = 0; b < B; ++b)
            std::copy(xp + b * C * TV, xp + (b + 1) * C * TV,
                      op + (b * Ctot + coff) * TV);
        coff += C;
    }
    return make_op<S>(std::move(out), xs,
                      [B, Ctot, TV](Node<S>& self) {
                          const S* g = self.grad.data();
                          int64_t coff = 0;
                          for (auto& p : self.parents) {
                              const int64_t C = p->value.dim(1);
                              if (p->requires_grad) {
                                  S* dst = p->ensure_grad().mutable_data();
#pragma omp parallel for
                                  for (int64_t b = 0; b < B; ++b) {
                                      const S* gsrc = g + (b * Ctot + coff) * TV;
                                      S* dd = dst + b * C * TV;
                                      for (int64_t i = 0; i < C * TV; ++i) dd[i] += gsrc[i];
                                  }
                              }
                              coff += C;
                          }
                      },
                      "concat_channels");
}

// Replicate the last frame until the frame axis reaches t_pad.
template <typename S>
NodeP<S> pad_time_edge(const NodeP<S>& x, int64_t t_pad) {
    expect_rank4(x->value, "pad_time_edge");
    const int64_t B = x->value.dim(0), C = x->value.dim(1), T = x->value.dim(2),
                  V = x->value.dim(3);
    if (t_pad < T) throw ShapeError("pad_time_edge: target length below input length");
    if (t_pad == T) return x;
    Tensor<S> out({B, C, t_pad, V});
    const S* xp = x->value.data();
    S* op = out.mutable_data();
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t t = 0; t < t_pad; ++t) {
                const int64_t ts = std::min(t, T - 1);
                const S* src = xp + ((b * C + c) * T + ts) * V;
                std::copy(src, src + V, op + ((b * C + c) * t_pad + t) * V);
            }
    return make_op<S>(std::move(out), {x},
                      [B, C, T, t_pad, V](Node<S>& self) {
                          const S* g = self.grad.data();
                          S* dst = self.parents[0]->ensure_grad().mutable_data();
#pragma omp parallel for collapse(2)
                          for (int64_t b = 0; b < B; ++b)
                              for (int64_t c = 0; c < C; ++c)
                                  for (int64_t t = 0; t < t_pad; ++t) {
                                      const int64_t ts = std::min(t, T - 1);
                                      const S* gr = g + ((b * C + c) * t_pad + t) * V;
                                      S* dd = dst + ((b * C + c) * T + ts) * V;
                                      for (int64_t v = 0; v < V; ++v) dd[v] += gr[v];
                                  }
                      },
                      "pad_time_edge");
}

// Keep frames [0, t_keep).
template <typename S>
NodeP<S> slice_time(const NodeP<S>& x, int64_t t_keep) {
    expect_rank4(x->value, "slice_time");
    const int64_t B = x->value.dim(0), C = x->value.dim(1), T = x->value.dim(2),
                  V = x->value.dim(3);
    if (t_keep > T || t_keep < 1) throw ShapeError("slice_time: bad length");
    if (t_keep == T) return x;
    Tensor<S> out({B, C, t_keep, V});
    const S* xp = x->value.data();
    S* op = out.mutable_data();
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            std::copy(xp + (b * C + c) * T * V, xp + ((b * C + c) * T + t_keep) * V,
                      op + (b * C + c) * t_keep * V);
    return make_op<S>(std::move(out), {x},
                      [B, C, T, t_keep, V](Node<S>& self) {
                          const S* g = self.grad.data();
                          S* dst = self.parents[0]->ensure_grad().mutable_data();
#pragma omp parallel for collapse(2)
                          for (int64_t b = 0; b < B; ++b)
                              for (int64_t c = 0; c < C; ++c) {
                                  const S* gr = g + (b * C + c) * t_keep * V;
                                  S* dd = dst + (b * C + c) * T * V;
                                  for (int64_t i = 0; i < t_keep * V; ++i) dd[i] += gr[i];
                              }
                      },
                      "slice_time");
}

// Collapse the node axis by averaging: [B x C x T x V] -> [B x C x T x 1]
template <typename S>
NodeP<S> mean_nodes(const NodeP<S>& x) {
    expect_rank4(x->value, "mean_nodes");
    const int64_t B = x->value.dim(0), C = x->value.dim(1), T = x->value.dim(2),
                  V = x->value.dim(3);
    Tensor<S> out({B, C, T, 1});
    const S* xp = x->value.data();
    S* op = out.mutable_data();
#pragma omp parallel for collapse(2)
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t t = 0; t < T; ++t) {
                S acc = S(0);
                const S* row = xp + ((b * C + c) * T + t) * V;
                for (int64_t v = 0; v < V; ++v) acc += row[v];
                op[(b * C + c) * T + t] = acc / static_cast<S>(V);
            }
    return make_op<S>(std::move(out), {x},
                      [B, C, T, V](Node<S>& self) {
                          const S* g = self.grad.data();
                          S* dst = self.parents[0]->ensure_grad().mutable_data();
                          const S inv = S(1) / static_cast<S>(V);
#pragma omp parallel for collapse(2)
                          for (int64_t b = 0; b < B; ++b)
                              for (int64_t c = 0; c < C; ++c)
                                  for (int64_t t = 0; t < T; ++t) {
                                      const S gv = g[(b * C + c) * T + t] * inv;
                                      S* dd = dst + ((b * C + c) * T + t) * V;
                                      for (int64_t v = 0; v < V; ++v) dd[v] += gv;
                                  }
                      },
                      "mean_nodes");
}

}  // namespace uqtf::ad
