#include <cmath>

#include "doctest.h"
#include "test_util.hpp"
#include "uqtf/autodiff.hpp"
#include "uqtf/batchnorm.hpp"
#include "uqtf/reference.hpp"

using namespace uqtf;
using ad::NodeP;

TEST_CASE("matmul: identity and projector cases") {
    auto eye = ad::constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
    auto m = ad::constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
    auto r = ad::matmul(eye, m);
    for (int64_t i = 0; i < 4; ++i) CHECK(r->value.at(i) == m->value.at(i));

    auto proj = ad::constant(Tensor<double>({2, 2}, {1, 0, 0, 0}));
    auto v = ad::constant(Tensor<double>({2, 1}, {5, 7}));
    auto pv = ad::matmul(proj, v);
    CHECK(pv->value.at(0) == 5);
    CHECK(pv->value.at(1) == 0);

    CHECK_THROWS_AS(ad::matmul(ad::constant(Tensor<double>({2, 3})),
                               ad::constant(Tensor<double>({2, 3}))),
                    ShapeError);
}

TEST_CASE("matmul: random case matches triple-loop oracle at 1e-12") {
    for (uint64_t seed = 0; seed < 5; ++seed) {
        auto a = testutil::random_tensor<double>({3, 4}, seed + 61);
        auto b = testutil::random_tensor<double>({4, 2}, seed + 62);
        auto r = ad::matmul(ad::constant(a), ad::constant(b));
        Tensor<double> expect({3, 2});
        ref::matmul(a.data(), b.data(), expect.mutable_data(), 3, 4, 2);
        CHECK(testutil::max_abs_diff(r->value, expect) < 1e-12);
    }
}

TEST_CASE("temporal_conv: K=1 identity kernel") {
    auto x = testutil::random_tensor<double>({1, 1, 8, 2}, 70);
    auto w = ad::constant(Tensor<double>({1, 1, 1}, {1.0}));
    auto y = ad::temporal_conv(ad::constant(x), w, nullptr, 1, 0);
    CHECK(testutil::max_abs_diff(y->value, x) == 0);
}

TEST_CASE("temporal_conv: impulse response of a box kernel") {
    Tensor<double> x({1, 1, 11, 1});
    x.at(5) = 1.0;
    auto w = ad::constant(Tensor<double>({1, 1, 3}, {1.0, 1.0, 1.0}));
    auto y = ad::temporal_conv(ad::constant(x), w, nullptr, 1, 1);
    for (int64_t t = 0; t < 11; ++t) {
        const double expect = (t >= 4 && t <= 6) ? 1.0 : 0.0;
        CHECK(y->value.at(t) == expect);
    }
}

TEST_CASE("temporal_conv: random K=9 stride 2 matches sliding-window oracle") {
    const int64_t B = 2, Ci = 3, Co = 4, T = 20, V = 5, K = 9, stride = 2, pad = 4;
    const int64_t To = (T + 2 * pad - K) / stride + 1;
    auto x = testutil::random_tensor<double>({B, Ci, T, V}, 81);
    auto w = testutil::random_tensor<double>({Co, Ci, K}, 82);
    auto b = testutil::random_tensor<double>({Co}, 83);
    auto y = ad::temporal_conv(ad::constant(x), ad::constant(w), ad::constant(b), stride, pad);
    Tensor<double> expect({B, Co, To, V});
    ref::temporal_conv(x.data(), w.data(), b.data(), expect.mutable_data(), B, Ci, Co, T, V, K,
                       stride, pad, To);
    CHECK(testutil::max_abs_diff(y->value, expect) < 1e-12);
}

TEST_CASE("temporal_conv: stride 1 with pad (K-1)/2 preserves T") {
    for (int64_t K : {1, 3, 5, 9}) {
        auto x = testutil::random_tensor<double>({1, 2, 17, 3}, 90 + K);
        auto w = testutil::random_tensor<double>({2, 2, K}, 91 + K);
        auto y = ad::temporal_conv(ad::constant(x), ad::constant(w), nullptr, 1, (K - 1) / 2);
        CHECK(y->value.dim(2) == 17);
    }
}

TEST_CASE("temporal_conv: degenerate output length error") {
    auto x = testutil::random_tensor<double>({1, 1, 3, 1}, 95);
    auto w = testutil::random_tensor<double>({1, 1, 9}, 96);
    CHECK_THROWS_AS(ad::temporal_conv(ad::constant(x), ad::constant(w), nullptr, 1, 0),
                    ShapeError);
}

TEST_CASE("activations: pinned values") {
    auto x = ad::constant(Tensor<double>({3}, {0.0, -3.5, 2.0}));
    auto t = ad::tanh_act(x);
    CHECK(t->value.at(0) == 0.0);
    auto r = ad::relu(x);
    CHECK(r->value.at(0) == 0.0);
    CHECK(r->value.at(1) == 0.0);
    CHECK(r->value.at(2) == 2.0);
}

TEST_CASE("softmax: symmetric input and row normalization") {
    auto z = ad::softmax_classes(ad::constant(Tensor<double>({1, 3, 1}, {0, 0, 0})));
    for (int64_t i = 0; i < 3; ++i) CHECK(z->value.at(i) == doctest::Approx(1.0 / 3).epsilon(1e-12));

    for (uint64_t seed = 0; seed < 20; ++seed) {
        auto x = testutil::random_tensor<double>({2, 5, 7}, seed + 100, -8.0, 8.0);
        auto y = ad::softmax_classes(ad::constant(x));
        for (int64_t b = 0; b < 2; ++b)
            for (int64_t t = 0; t < 7; ++t) {
                double sum = 0;
                for (int64_t c = 0; c < 5; ++c) {
                    const double p = y->value.at((b * 5 + c) * 7 + t);
                    CHECK(p >= 0.0);
                    sum += p;
                }
                CHECK(std::abs(sum - 1.0) < 1e-6);
            }
    }
}

TEST_CASE("interpolate_time: identity is bitwise, constants stay constant, ramp closed form") {
    auto x = testutil::random_tensor<double>({1, 2, 4, 3}, 110);
    auto same = ad::interpolate_time(ad::constant(x), 4);
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(same->value.at(i) == x.at(i));

    auto c = ad::interpolate_time(ad::constant(Tensor<double>::full({1, 1, 5, 1}, 2.5)), 13);
    for (int64_t i = 0; i < c->value.numel(); ++i) CHECK(c->value.at(i) == doctest::Approx(2.5));

    auto ramp = ad::interpolate_time(ad::constant(Tensor<double>({1, 1, 2, 1}, {0.0, 1.0})), 5);
    for (int64_t i = 0; i < 5; ++i)
        CHECK(ramp->value.at(i) == doctest::Approx(i / 4.0).epsilon(1e-12));
}

TEST_CASE("backward: loss = sum(w) gives all-ones gradient") {
    auto w = ad::leaf(testutil::random_tensor<double>({3, 4}, 120), true);
    auto loss = ad::sum_all(w);
    ad::backward(loss);
    for (int64_t i = 0; i < 12; ++i) CHECK(w->grad.at(i) == 1.0);
}

TEST_CASE("backward: quadratic analytic gradient") {
    // loss = (w - 3)^2 at w = 5 -> dloss/dw = 4
    auto w = ad::leaf(Tensor<double>::scalar(5.0), true);
    auto shifted = ad::add(w, ad::constant(Tensor<double>::scalar(-3.0)));
    auto loss = ad::mul(shifted, shifted);
    ad::backward(loss);
    CHECK(w->grad.at(0) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("backward: non-scalar loss is a contract error") {
    auto w = ad::leaf(testutil::random_tensor<double>({3}, 1), true);
    CHECK_THROWS_AS(ad::backward(w), ContractError);
}

TEST_CASE("forward finite check raises on NaN") {
    auto inf = ad::leaf(Tensor<double>::scalar(std::numeric_limits<double>::infinity()), false);
    auto zero = ad::leaf(Tensor<double>::scalar(0.0), false);
    CHECK_THROWS_AS(ad::mul(inf, zero), NumericError);
}

TEST_CASE("cross_entropy: uniform logits give log(n), label range checked") {
    auto logits = ad::constant(Tensor<double>({1, 4, 3}));
    auto loss = ad::cross_entropy(logits, std::vector<int>{0, 1, 2});
    CHECK(loss->value.item() == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    CHECK_THROWS_AS(ad::cross_entropy(logits, std::vector<int>{0, 1, 7}), ContractError);
}

TEST_CASE("tpp_pool_broadcast: bin means match a direct oracle") {
    const int64_t T = 12;
    auto x = testutil::random_tensor<double>({2, 3, T, 4}, 130);
    for (int64_t bins : {1L, 2L, 4L, 8L}) {
        auto y = ad::tpp_pool_broadcast(ad::constant(x), bins);
        for (int64_t b = 0; b < 2; ++b)
            for (int64_t c = 0; c < 3; ++c)
                for (int64_t v = 0; v < 4; ++v)
                    for (int64_t i = 0; i < bins; ++i) {
                        const int64_t lo = i * T / bins, hi = (i + 1) * T / bins;
                        double mean = 0;
                        for (int64_t t = lo; t < hi; ++t)
                            mean += x.at(((b * 3 + c) * T + t) * 4 + v);
                        mean /= static_cast<double>(hi - lo);
                        for (int64_t t = lo; t < hi; ++t)
                            CHECK(y->value.at(((b * 3 + c) * T + t) * 4 + v) ==
                                  doctest::Approx(mean).epsilon(1e-12));
                    }
    }
    CHECK_THROWS_AS(ad::tpp_pool_broadcast(ad::constant(x), 13), ConfigError);
}

TEST_CASE("time_mean / channel_mean / mean_nodes small oracles") {
    auto x = ad::constant(Tensor<double>({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8}));
    auto tm = ad::time_mean(x);  // mean over frames
    CHECK(tm->value.at(0) == doctest::Approx(2.0));  // (1+3)/2
    CHECK(tm->value.at(1) == doctest::Approx(3.0));  // (2+4)/2
    CHECK(tm->value.at(2) == doctest::Approx(6.0));
    CHECK(tm->value.at(3) == doctest::Approx(7.0));

    auto cm = ad::channel_mean(tm);
    CHECK(cm->value.at(0) == doctest::Approx(4.0));
    CHECK(cm->value.at(1) == doctest::Approx(5.0));

    auto mn = ad::mean_nodes(x);
    CHECK(mn->value.at(0) == doctest::Approx(1.5));
    CHECK(mn->value.at(1) == doctest::Approx(3.5));
}

TEST_CASE("pair_diff oracle") {
    auto s = ad::constant(Tensor<double>({1, 3}, {1.0, 2.0, 4.0}));
    auto d = ad::pair_diff(s);
    CHECK(d->value.at(0 * 3 + 1) == doctest::Approx(-1.0));
    CHECK(d->value.at(2 * 3 + 0) == doctest::Approx(3.0));
    CHECK(d->value.at(1 * 3 + 1) == doctest::Approx(0.0));
}

TEST_CASE("concat / slice / pad shape semantics") {
    auto a = testutil::random_tensor<double>({1, 2, 3, 2}, 140);
    auto b = testutil::random_tensor<double>({1, 3, 3, 2}, 141);
    auto cat = ad::concat_channels<double>({ad::constant(a), ad::constant(b)});
    REQUIRE(cat->value.dim(1) == 5);
    CHECK(cat->value.at4(0, 0, 0, 0) == a.at4(0, 0, 0, 0));
    CHECK(cat->value.at4(0, 2, 1, 1) == b.at4(0, 0, 1, 1));

    auto padded = ad::pad_time_edge(ad::constant(a), 5);
    REQUIRE(padded->value.dim(2) == 5);
    CHECK(padded->value.at4(0, 1, 4, 1) == a.at4(0, 1, 2, 1));  // edge replication

    auto sliced = ad::slice_time(padded, 3);
    CHECK(testutil::max_abs_diff(sliced->value, a) == 0);
}

TEST_CASE("batch_norm: zero input stays zero, running stats converge to batch stats") {
    ParameterStore<double> store;
    auto bn = BatchNorm<double>::create(store, "bn", 2);
    TapeCtx<double> ctx;
    ctx.training = true;

    auto zero = ad::constant(Tensor<double>({1, 2, 3, 2}));
    auto y = bn(ctx, zero);
    for (int64_t i = 0; i < y->value.numel(); ++i) CHECK(y->value.at(i) == 0.0);

    auto x = testutil::random_tensor<double>({2, 2, 4, 3}, 150, 1.0, 3.0);
    for (int i = 0; i < 200; ++i) {
        TapeCtx<double> c2;
        c2.training = true;
        bn(c2, ad::constant(x));
    }
    // batch mean of channel 0
    double mean = 0;
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t i = 0; i < 12; ++i) mean += x.at((b * 2 + 0) * 12 + i);
    mean /= 24.0;
    CHECK(bn.running_mean->at(0) == doctest::Approx(mean).epsilon(1e-6));

    // eval mode normalizes with the running stats: a batch equal to the
    // training batch maps to roughly zero-mean output
    TapeCtx<double> ev;
    ev.training = false;
    auto ye = bn(ev, ad::constant(x));
    double om = 0;
    for (int64_t b = 0; b < 2; ++b)
        for (int64_t i = 0; i < 12; ++i) om += ye->value.at((b * 2 + 0) * 12 + i);
    CHECK(std::abs(om / 24.0) < 1e-3);
}
