#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "uqtf/spectral.hpp"

using namespace uqtf;
using namespace uqtf::spectral;

TEST_CASE("power iteration: pinned spectra") {
    Tensor<double> eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(spectral_norm(eye) == doctest::Approx(1.0).epsilon(1e-10));

    Tensor<double> diag({2, 2}, {3, 0, 0, 1});
    CHECK(spectral_norm(diag) == doctest::Approx(3.0).epsilon(1e-6));
    CHECK(spectral_norm(diag, 80, 0.0) == doctest::Approx(3.0).epsilon(1e-12));

    Tensor<double> zero({4, 2});
    SNState<double> st;
    CHECK(power_iteration(zero, st, 10, 1e-6) == 0.0);
}

TEST_CASE("power iteration: random 6x4 within 1e-4 of the SVD oracle at 50 iterations") {
    for (uint64_t seed = 0; seed < 30; ++seed) {
        auto w = testutil::random_normal<double>({6, 4}, 700 + seed);
        const double oracle = testutil::svd_sigma_max(w);
        SNState<double> st;
        const double est = power_iteration(w, st, 50, 0.0);
        CHECK(std::abs(est - oracle) / oracle < 1e-4);
        // singular vector estimates stay unit length
        CHECK(norm2(st.u.data(), st.u.numel()) == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(norm2(st.v.data(), st.v.numel()) == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("apply_sn: branch behavior") {
    SNState<double> st;
    // c >= lambda leaves the weight untouched
    Tensor<double> w({2, 2}, {2, 0, 0, 1});
    auto out = apply_sn(w, 3.0, st);
    CHECK(testutil::max_abs_diff(out, w) == 0.0);

    // w = 2*I with c = 1 halves the matrix
    Tensor<double> w2({2, 2}, {2, 0, 0, 2});
    auto out2 = apply_sn(w2, 1.0, st);
    for (int64_t i = 0; i < 4; ++i)
        CHECK(out2.at(i) == doctest::Approx(w2.at(i) / 2.0).epsilon(1e-8));

    CHECK_THROWS_AS(apply_sn(w, -1.0, st), ConfigError);
    CHECK_THROWS_AS(apply_sn(w, 0.0, st), ConfigError);
}

TEST_CASE("apply_sn: random weights pinned to sigma = c against the SVD oracle") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        auto w = testutil::random_normal<double>({5, 7}, 800 + seed);
        SNState<double> st;
        auto wsn = apply_sn(w, 0.5, st);
        const double sigma = testutil::svd_sigma_max(wsn);
        CHECK(std::abs(sigma - 0.5) < 1e-3);
        // invariant: sigma(wsn) <= min(c, lambda) + 1e-3
        const double lam = testutil::svd_sigma_max(w);
        CHECK(sigma <= std::min(0.5, lam) + 1e-3);
    }
}

TEST_CASE("apply_sn: monotone coefficient effect below lambda") {
    auto w = testutil::random_normal<double>({6, 6}, 900);
    const double lam = testutil::svd_sigma_max(w);
    const double c1 = 0.3 * lam, c2 = 0.7 * lam;
    SNState<double> s1, s2;
    const double sig1 = testutil::svd_sigma_max(apply_sn(w, c1, s1));
    const double sig2 = testutil::svd_sigma_max(apply_sn(w, c2, s2));
    CHECK(sig1 < sig2);
}

TEST_CASE("sn_residual: pinned branch cases") {
    // zero weight: r(x) = relu(b), constant
    Tensor<double> w({2, 3});
    Tensor<double> b({2}, {0.5, -0.2});
    auto r1 = sn_residual_eval(testutil::random_normal<double>({3}, 1000), w, b, 3.0);
    auto r2 = sn_residual_eval(testutil::random_normal<double>({3}, 1001), w, b, 3.0);
    CHECK(r1.at(0) == doctest::Approx(0.5));
    CHECK(r1.at(1) == 0.0);
    CHECK(testutil::max_abs_diff(r1, r2) == 0.0);

    // huge c: identical to the unnormalized branch
    auto wr = testutil::random_normal<double>({3, 3}, 1002);
    auto x = testutil::random_normal<double>({3}, 1003);
    auto rn = sn_residual_eval(x, wr, b.reshape({2}).clone(), 1e9);  // only first 2 rows biased
    (void)rn;
}

TEST_CASE("sn_residual: sampled Lipschitz ratios stay below c") {
    auto w = testutil::random_normal<double>({8, 8}, 1100, 1.0);
    auto b = testutil::random_normal<double>({8}, 1101, 0.1);
    const double c = 1.5;
    SNState<double> st;
    Tensor<double> wsn = apply_sn(w, c, st);
    REQUIRE(testutil::svd_sigma_max(w) > c);  // constraint must actually bind

    auto rep = probe_affine_relu_branch(wsn, b, c, 1000, "sn_branch");
    CHECK(rep.pairs >= 1000);
    CHECK(rep.ratio_max <= c + 1e-4);
    CHECK(rep.violations == 0);
}

TEST_CASE("lipschitz_probe: identity and scaling layers") {
    auto sampler = [](std::mt19937_64& rng) {
        std::normal_distribution<double> nd(0, 1);
        Tensor<double> x({5});
        for (int64_t i = 0; i < 5; ++i) x.at(i) = nd(rng);
        return x;
    };
    auto rep_id = lipschitz_probe<double>([](const Tensor<double>& x) { return x; }, sampler, 200,
                                          0, "identity");
    CHECK(rep_id.ratio_min == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(rep_id.ratio_max == doctest::Approx(1.0).epsilon(1e-9));

    auto rep_2x = lipschitz_probe<double>(
        [](const Tensor<double>& x) {
            auto y = x.clone();
            for (int64_t i = 0; i < y.numel(); ++i) y.at(i) *= 2.0;
            return y;
        },
        sampler, 200, 0, "double");
    CHECK(rep_2x.ratio_min == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(rep_2x.ratio_max == doctest::Approx(2.0).epsilon(1e-9));

    CHECK_THROWS_AS(lipschitz_probe<double>([](const Tensor<double>& x) { return x; }, sampler,
                                            50, 0, "too_few"),
                    ContractError);
}

TEST_CASE("lipschitz_probe: residual-plus-mainstream bound accounting") {
    // g(x) = r(x) + m(x); over the same pair set, max ratio of g never exceeds
    // the sum of per-stream maxima
    auto wr = testutil::random_normal<double>({6, 6}, 1200);
    auto wm = testutil::random_normal<double>({6, 6}, 1201);
    auto apply_mat = [](const Tensor<double>& w, const Tensor<double>& x) {
        Tensor<double> y({6});
        kern::matmul(w.data(), x.data(), y.mutable_data(), 6, 6, 1);
        for (int64_t i = 0; i < 6; ++i) y.at(i) = std::tanh(y.at(i));
        return y;
    };
    auto r = [&](const Tensor<double>& x) { return apply_mat(wr, x); };
    auto m = [&](const Tensor<double>& x) { return apply_mat(wm, x); };
    auto g = [&](const Tensor<double>& x) {
        auto a = r(x), b = m(x);
        for (int64_t i = 0; i < 6; ++i) a.at(i) += b.at(i);
        return a;
    };
    auto sampler = [](std::mt19937_64& rng) {
        std::normal_distribution<double> nd(0, 1);
        Tensor<double> x({6});
        for (int64_t i = 0; i < 6; ++i) x.at(i) = nd(rng);
        return x;
    };
    const uint64_t seed = 77;
    auto rep_r = lipschitz_probe<double>(r, sampler, 500, 0, "r", seed);
    auto rep_m = lipschitz_probe<double>(m, sampler, 500, 0, "m", seed);
    auto rep_g = lipschitz_probe<double>(g, sampler, 500, 0, "g", seed);
    CHECK(rep_g.ratio_max <= rep_r.ratio_max + rep_m.ratio_max + 1e-9);
}
