// Finite-difference verification of every differentiable op, at 64-bit.

#include "doctest.h"
#include "test_util.hpp"
#include "uqtf/batchnorm.hpp"
#include "uqtf/gradcheck.hpp"

using namespace uqtf;
using ad::NodeP;
using D = double;

TEST_CASE("grad_check: linear map below 1e-9") {
    auto w = testutil::random_tensor<D>({4, 3}, 200);
    auto err = ad::grad_check<D>(
        [&](const NodeP<D>& x) { return ad::matmul(ad::constant(w), x); },
        testutil::random_tensor<D>({3, 2}, 201), 1e-5);
    CHECK(err < 1e-9);
}

TEST_CASE("grad_check: tanh composition below 1e-6") {
    auto w = testutil::random_tensor<D>({3, 3}, 210);
    auto err = ad::grad_check<D>(
        [&](const NodeP<D>& x) {
            return ad::tanh_act(ad::matmul(ad::constant(w), ad::tanh_act(x)));
        },
        testutil::random_tensor<D>({3, 2}, 211), 1e-5);
    CHECK(err < 1e-6);
}

TEST_CASE("grad_check: eps contract enforced") {
    CHECK_THROWS_AS(ad::grad_check<D>([](const NodeP<D>& x) { return x; },
                                      Tensor<D>::scalar(1.0), 1e-2),
                    ContractError);
}

TEST_CASE("grad_check property: every op under 1e-4 over 21 seeds") {
    const double tol = 1e-4;
    const double eps = 1e-5;
    for (uint64_t seed = 0; seed < 21; ++seed) {
        const uint64_t s = seed * 1000;

        // add / mul against a fixed other operand
        auto other = testutil::random_tensor<D>({2, 3, 4, 2}, s + 1);
        auto x4 = testutil::random_tensor<D>({2, 3, 4, 2}, s + 2);
        CHECK(ad::grad_check<D>(
                  [&](const NodeP<D>& x) { return ad::add(x, ad::constant(other)); }, x4, eps) <
              tol);
        CHECK(ad::grad_check<D>(
                  [&](const NodeP<D>& x) { return ad::mul(x, ad::constant(other)); }, x4, eps) <
              tol);
        CHECK(ad::grad_check<D>([&](const NodeP<D>& x) { return ad::scale_const(x, D(1.7)); }, x4,
                                eps) < tol);
        CHECK(ad::grad_check<D>([&](const NodeP<D>& x) { return ad::tanh_act(x); }, x4, eps) <
              tol);
        CHECK(ad::grad_check<D>([&](const NodeP<D>& x) { return ad::relu(x); }, x4, eps) < tol);

        // matmul w.r.t. both operands
        auto a = testutil::random_tensor<D>({3, 4}, s + 3);
        auto b = testutil::random_tensor<D>({4, 2}, s + 4);
        CHECK(ad::grad_check<D>(
                  [&](const NodeP<D>& x) { return ad::matmul(x, ad::constant(b)); }, a, eps) <
              tol);
        CHECK(ad::grad_check<D>(
                  [&](const NodeP<D>& x) { return ad::matmul(ad::constant(a), x); }, b, eps) <
              tol);

        // channel_map w.r.t. input, weight, bias
        auto cw = testutil::random_tensor<D>({4, 3}, s + 5);
        auto cb = testutil::random_tensor<D>({4}, s + 6);
        CHECK(ad::grad_check<D>(
                  [&](const NodeP<D>& x) {
                      return ad::channel_map(x, ad::constant(cw), ad::constant(cb));
                  },
                  x4, eps) < tol);
        CHECK(ad::grad_check<D>(
                  [&](const NodeP<D>& w) {
                      return ad::channel_map(ad::constant(x4), w, ad::constant(cb));
                  },
                  cw, eps) < tol);
        CHECK(ad::grad_check<D>(
                  [&](const NodeP<D>& bb) {
                      return ad::channel_map(ad::constant(x4), ad::constant(cw), bb);
                  },
                  cb, eps) < tol);

        // temporal conv (full and depthwise), stride 2
        auto tw = testutil::random_tensor<D>({2, 3, 3}, s + 7);
        CHECK(ad::grad_check<D>(
                  [&](const NodeP<D>& x) {
                      return ad::temporal_conv(x, ad::constant(tw), nullptr, 2, 1);
                  },
                  x4, eps) < tol);
        CHECK(ad::grad_check<D>(
                  [&](const NodeP<D>& w) {
                      return ad::temporal_conv(ad::constant(x4), w, nullptr, 2, 1);
                  },
                  tw, eps) < tol);
        auto dw = testutil::random_tensor<D>({3, 3}, s + 8);
        CHECK(ad::grad_check<D>(
                  [&](const NodeP<D>& w) {
                      return ad::depthwise_temporal_conv(ad::constant(x4), w, nullptr, 1, 1);
                  },
                  dw, eps) < tol);

        // node ops
        auto mix = testutil::random_tensor<D>({2, 2, 2}, s + 9);
        CHECK(ad::grad_check<D>(
                  [&](const NodeP<D>& x) { return ad::node_mix(x, ad::constant(mix)); }, x4,
                  eps) < tol);
        CHECK(ad::grad_check<D>(
                  [&](const NodeP<D>& m) { return ad::node_mix(ad::constant(x4), m); }, mix,
                  eps) < tol);
        auto pooled = testutil::random_tensor<D>({2, 3, 4}, s + 10);
        CHECK(ad::grad_check<D>([&](const NodeP<D>& p) { return ad::node_gram(p); }, pooled,
                                eps) < tol);
        CHECK(ad::grad_check<D>([&](const NodeP<D>& p) { return ad::channel_mean(p); }, pooled,
                                eps) < tol);
        auto svec = testutil::random_tensor<D>({2, 4}, s + 11);
        CHECK(ad::grad_check<D>([&](const NodeP<D>& p) { return ad::pair_diff(p); }, svec, eps) <
              tol);

        // gated adjacency w.r.t. attention map and gate
        auto a_static = testutil::random_tensor<D>({2, 2}, s + 12);
        auto att = testutil::random_tensor<D>({2, 2, 2}, s + 13);
        CHECK(ad::grad_check<D>(
                  [&](const NodeP<D>& at) {
                      return ad::gated_adjacency(
                          at, ad::constant(Tensor<D>::scalar(0.7)), a_static);
                  },
                  att, eps) < tol);
        CHECK(ad::grad_check<D>(
                  [&](const NodeP<D>& g) {
                      return ad::gated_adjacency(ad::constant(att), g, a_static);
                  },
                  Tensor<D>::scalar(0.4), eps) < tol);

        // shape ops
        CHECK(ad::grad_check<D>([&](const NodeP<D>& x) { return ad::time_mean(x); }, x4, eps) <
              tol);
        CHECK(ad::grad_check<D>([&](const NodeP<D>& x) { return ad::mean_nodes(x); }, x4, eps) <
              tol);
        CHECK(ad::grad_check<D>([&](const NodeP<D>& x) { return ad::interpolate_time(x, 9); },
                                x4, eps) < tol);
        CHECK(ad::grad_check<D>([&](const NodeP<D>& x) { return ad::tpp_pool_broadcast(x, 2); },
                                x4, eps) < tol);
        CHECK(ad::grad_check<D>([&](const NodeP<D>& x) { return ad::pad_time_edge(x, 7); }, x4,
                                eps) < tol);
        CHECK(ad::grad_check<D>([&](const NodeP<D>& x) { return ad::slice_time(x, 3); }, x4,
                                eps) < tol);
        auto nodew = testutil::random_tensor<D>({3, 2}, s + 14);
        CHECK(ad::grad_check<D>(
                  [&](const NodeP<D>& x) {
                      return ad::depthwise_node_conv(x, ad::constant(nodew), nullptr, 2);
                  },
                  x4, eps) < tol);

        // softmax and cross-entropy
        auto logits = testutil::random_tensor<D>({2, 4, 3}, s + 15);
        CHECK(ad::grad_check<D>([&](const NodeP<D>& x) { return ad::softmax_classes(x); },
                                logits, eps) < tol);
        std::vector<int> labels = {0, 1, 2, 3, 0, 1};
        CHECK(ad::grad_check<D>(
                  [&](const NodeP<D>& x) { return ad::cross_entropy(x, labels); }, logits, eps) <
              tol);
    }
}

TEST_CASE("grad_check: batch norm in both modes") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        auto x = testutil::random_tensor<D>({2, 3, 4, 2}, 300 + seed);
        auto gamma = testutil::random_tensor<D>({3}, 301 + seed, 0.5, 1.5);
        auto beta = testutil::random_tensor<D>({3}, 302 + seed);
        for (bool training : {true, false}) {
            Tensor<D> rm = testutil::random_tensor<D>({3}, 303 + seed);
            Tensor<D> rv = testutil::random_tensor<D>({3}, 304 + seed, 0.5, 2.0);
            CHECK(ad::grad_check<D>(
                      [&](const NodeP<D>& xx) {
                          Tensor<D> m = rm.clone(), v = rv.clone();
                          return ad::batch_norm(xx, ad::constant(gamma), ad::constant(beta), &m,
                                                &v, training);
                      },
                      x, 1e-5) < 1e-4);
            CHECK(ad::grad_check<D>(
                      [&](const NodeP<D>& g) {
                          Tensor<D> m = rm.clone(), v = rv.clone();
                          return ad::batch_norm(ad::constant(x), g, ad::constant(beta), &m, &v,
                                                training);
                      },
                      gamma, 1e-5) < 1e-4);
            CHECK(ad::grad_check<D>(
                      [&](const NodeP<D>& b) {
                          Tensor<D> m = rm.clone(), v = rv.clone();
                          return ad::batch_norm(ad::constant(x), ad::constant(gamma), b, &m, &v,
                                                training);
                      },
                      beta, 1e-5) < 1e-4);
        }
    }
}
