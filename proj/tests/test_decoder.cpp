#include <random>

#include "doctest.h"
#include "model_fd.hpp"
#include "test_util.hpp"
#include "uqtf/decoder.hpp"
#include "uqtf/gradcheck.hpp"
#include "uqtf/graph.hpp"
#include "uqtf/model.hpp"

using namespace uqtf;
using namespace uqtf::dec;
using ad::NodeP;

namespace {
ModelConfig micro_config(ResidualArm arm) {
    // the architecture at toy width: V=8, T=24 handled by the caller
    ModelConfig cfg = ModelConfig::desk_default(5, arm);
    const int64_t ch[10] = {4, 4, 4, 6, 6, 6, 8, 8, 8, 8};
    int64_t prev = 3;
    for (int i = 0; i < 10; ++i) {
        cfg.encoder.blocks[static_cast<size_t>(i)].c_in = prev;
        cfg.encoder.blocks[static_cast<size_t>(i)].c_out = ch[i];
        prev = ch[i];
    }
    cfg.decoder.enc_channels = 8;
    cfg.decoder.fusion_channels = 8;
    cfg.decoder.classifier_hidden = 8;
    cfg.decoder.tpp_bins = {1, 2, 3, 6};  // condensed length is 6 at T=24
    return cfg;
}
}  // namespace

TEST_CASE("bottleneck: zero expand weights reduce to the identity") {
    ParameterStore<double> store;
    std::mt19937_64 rng(10);
    auto bt = Bottleneck<double>::create(store, "bt", 4, 2, 9, rng);
    std::fill(bt.expand_w->value.mutable_data(),
              bt.expand_w->value.mutable_data() + bt.expand_w->value.numel(), 0.0);
    auto x = testutil::random_normal<double>({1, 4, 10, 3}, 2200);
    TapeCtx<double> ctx;
    auto y = bt.forward(ctx, ad::constant(x));
    CHECK(testutil::max_abs_diff(y->value, x) < 1e-12);
}

TEST_CASE("bottleneck: gradient check") {
    ParameterStore<double> store;
    std::mt19937_64 rng(11);
    auto bt = Bottleneck<double>::create(store, "bt", 3, 2, 5, rng);
    auto x = testutil::random_normal<double>({1, 3, 8, 2}, 2300);
    auto err = ad::grad_check<double>(
        [&](const NodeP<double>& xx) {
            TapeCtx<double> ctx;
            ctx.track_grads = false;
            return bt.forward(ctx, xx);
        },
        x, 1e-5);
    CHECK(err < 1e-4);
}

TEST_CASE("global feature extractor: constant-in-time input passes pooled branches unchanged") {
    DecoderConfig cfg;
    cfg.enc_channels = 4;
    cfg.tpp_bins = {1, 2, 4, 8};
    cfg.classes = 3;
    ParameterStore<double> store;
    std::mt19937_64 rng(12);
    auto d = Decoder<double>::create(store, cfg, 5, false, rng);

    // per (c, v) constant over frames
    Tensor<double> x({1, 4, 8, 5});
    for (int64_t c = 0; c < 4; ++c)
        for (int64_t t = 0; t < 8; ++t)
            for (int64_t v = 0; v < 5; ++v) x.at4(0, c, t, v) = 0.3 * c - 0.2 * v;
    // zero the bottlenecks so the input reaches the pyramid unchanged
    for (auto& bt : d.bottlenecks)
        std::fill(bt.expand_w->value.mutable_data(),
                  bt.expand_w->value.mutable_data() + bt.expand_w->value.numel(), 0.0);
    TapeCtx<double> ctx;
    auto y = d.global_features(ctx, ad::constant(x));

    // every pooled branch reproduces the constant, so the merge sees four
    // duplicated channel groups; check against that direct evaluation
    for (int64_t co = 0; co < 4; ++co)
        for (int64_t t = 0; t < 8; ++t)
            for (int64_t v = 0; v < 5; ++v) {
                double acc = d.tpp_b->value.at(co);
                for (int64_t g = 0; g < 4; ++g)
                    for (int64_t ci = 0; ci < 4; ++ci)
                        acc += d.tpp_w->value.at2(co, g * 4 + ci) * x.at4(0, ci, 0, v);
                acc += x.at4(0, co, t, v);  // temporal residual
                CHECK(y->value.at4(0, co, t, v) == doctest::Approx(acc).epsilon(1e-9));
            }

    // condensed length below the largest bin is a config error
    TapeCtx<double> c2;
    CHECK_THROWS_AS(d.global_features(c2, ad::constant(Tensor<double>({1, 4, 6, 5}))),
                    ConfigError);
}

TEST_CASE("feature_fusion: identity convolutions give low + enc when T' == T") {
    DecoderConfig cfg;
    cfg.enc_channels = 3;
    cfg.fusion_channels = 3;
    cfg.classes = 2;
    cfg.temporal_kernel = 9;
    ParameterStore<double> store;
    std::mt19937_64 rng(13);
    auto d = Decoder<double>::create(store, cfg, 4, false, rng);

    auto set_identity_pw = [](Parameter<double>* w) {
        std::fill(w->value.mutable_data(), w->value.mutable_data() + w->value.numel(), 0.0);
        for (int64_t i = 0; i < w->value.dim(0); ++i) w->value.at2(i, i) = 1.0;
    };
    auto zero = [](Parameter<double>* p) {
        std::fill(p->value.mutable_data(), p->value.mutable_data() + p->value.numel(), 0.0);
    };
    zero(d.fuse_dw_w);
    for (int64_t c = 0; c < 3; ++c) d.fuse_dw_w->value.at2(c, 4) = 1.0;  // impulse at center
    zero(d.fuse_dw_b);
    set_identity_pw(d.fuse_pw_w);
    zero(d.fuse_pw_b);
    set_identity_pw(d.fuse_conv_w);
    zero(d.fuse_conv_b);
    set_identity_pw(d.fuse_res_w);
    zero(d.fuse_res_b);

    auto low = testutil::random_normal<double>({1, 3, 7, 4}, 2400);
    auto enc = testutil::random_normal<double>({1, 3, 7, 4}, 2401);
    TapeCtx<double> ctx;
    auto y = d.feature_fusion(ctx, ad::constant(low), ad::constant(enc), 7);
    for (int64_t i = 0; i < y->value.numel(); ++i)
        CHECK(y->value.at(i) == doctest::Approx(low.at(i) + enc.at(i)).epsilon(1e-12));

    // zero residual weights: output equals the main path only
    zero(d.fuse_res_w);
    TapeCtx<double> c2;
    auto y2 = d.feature_fusion(c2, ad::constant(low), ad::constant(enc), 7);
    CHECK(testutil::max_abs_diff(y2->value, low) < 1e-12);
}

TEST_CASE("classify: V=1 identity stages reduce to the channel map") {
    DecoderConfig cfg;
    cfg.enc_channels = 3;
    cfg.fusion_channels = 3;
    cfg.classifier_hidden = 3;
    cfg.classes = 4;
    ParameterStore<double> store;
    std::mt19937_64 rng(14);
    auto d = Decoder<double>::create(store, cfg, 1, false, rng);
    REQUIRE(d.cls1_kernel == 1);
    REQUIRE(d.cls1_out_nodes == 1);

    auto ident = [](Parameter<double>* w) {
        std::fill(w->value.mutable_data(), w->value.mutable_data() + w->value.numel(), 0.0);
        for (int64_t i = 0; i < std::min(w->value.dim(0), w->value.dim(1)); ++i)
            w->value.at2(i, i) = 1.0;
    };
    std::fill(d.cls1_dw_w->value.mutable_data(), d.cls1_dw_w->value.mutable_data() + 3, 1.0);
    std::fill(d.cls2_dw_w->value.mutable_data(), d.cls2_dw_w->value.mutable_data() + 3, 1.0);
    for (Parameter<double>* p : {d.cls1_dw_b, d.cls1_pw_b, d.cls2_dw_b, d.cls2_pw_b, d.out_b})
        std::fill(p->value.mutable_data(), p->value.mutable_data() + p->value.numel(), 0.0);
    ident(d.cls1_pw_w);
    ident(d.cls2_pw_w);

    auto x = testutil::random_tensor<double>({1, 3, 5, 1}, 2500, 0.1, 1.0);  // positive input
    TapeCtx<double> ctx;
    auto out = d.classify(ctx, ad::constant(x));
    for (int64_t n = 0; n < 4; ++n)
        for (int64_t t = 0; t < 5; ++t) {
            double acc = 0;
            for (int64_t c = 0; c < 3; ++c) acc += d.out_w->value.at2(n, c) * x.at4(0, c, t, 0);
            CHECK(out.logits->value.at3(0, n, t) == doctest::Approx(acc).epsilon(1e-12));
        }

    // constant input over frames gives constant logits over frames
    auto xc = Tensor<double>::full({1, 3, 6, 1}, 0.7);
    TapeCtx<double> c2;
    auto out2 = d.classify(c2, ad::constant(xc));
    for (int64_t n = 0; n < 4; ++n)
        for (int64_t t = 1; t < 6; ++t)
            CHECK(out2.logits->value.at3(0, n, t) ==
                  doctest::Approx(out2.logits->value.at3(0, n, 0)).epsilon(1e-12));
}

TEST_CASE("model: output frame count equals input frame count for every stride config") {
    for (int64_t t : {24, 30, 37, 48, 120}) {
        auto cfg = micro_config(ResidualArm::plain);
        if (t < 24) cfg.decoder.tpp_bins = {1, 1, 2, 2};
        auto layout = graph::default_layout(0);
        layout.joint_names.resize(8);
        layout.bones = {{0, 1}, {2, 1}, {3, 2}, {4, 1}, {5, 4}, {6, 1}, {7, 6}};
        auto model = Model<double>::build(cfg, layout, 99);
        auto batch = testutil::random_normal<double>({1, 3, t, 8}, 2600 + t);
        auto ctx = model.make_ctx(true);
        auto out = model.forward(ctx, batch);
        CHECK(out.logits->value.dim(1) == 5);
        CHECK(out.logits->value.dim(2) == t);
        CHECK(out.penultimate->value.dim(2) == t);
    }
}

TEST_CASE("model: eval forward is deterministic and batch-duplication consistent") {
    auto cfg = micro_config(ResidualArm::sn);
    auto layout = graph::default_layout(0);
    layout.joint_names.resize(8);
    layout.bones = {{0, 1}, {2, 1}, {3, 2}, {4, 1}, {5, 4}, {6, 1}, {7, 6}};
    auto model = Model<double>::build(cfg, layout, 7);
    auto batch = testutil::random_normal<double>({1, 3, 24, 8}, 2700);
    {
        auto warm = model.make_ctx(true);
        model.forward(warm, batch);
    }
    auto e1 = model.make_ctx(false);
    auto y1 = model.forward(e1, batch);
    auto e2 = model.make_ctx(false);
    auto y2 = model.forward(e2, batch);
    for (int64_t i = 0; i < y1.logits->value.numel(); ++i)
        CHECK(y1.logits->value.at(i) == y2.logits->value.at(i));
}

TEST_CASE("model: micro-model finite-difference gradients") {
    auto cfg = micro_config(ResidualArm::plain);
    auto layout = graph::default_layout(0);
    layout.joint_names.resize(8);
    layout.bones = {{0, 1}, {2, 1}, {3, 2}, {4, 1}, {5, 4}, {6, 1}, {7, 6}};
    auto model = Model<double>::build(cfg, layout, 3);
    auto batch = testutil::random_normal<double>({1, 3, 24, 8}, 2800, 0.7);
    std::vector<int> labels(24);
    for (int i = 0; i < 24; ++i) labels[static_cast<size_t>(i)] = i % 5;
    const double err = testutil::model_grad_check(model, batch, labels, 1e-6, 2, 42);
    CHECK(err < 1e-4);
}
