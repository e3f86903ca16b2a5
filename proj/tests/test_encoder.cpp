#include <random>

#include "doctest.h"
#include "test_util.hpp"
#include "uqtf/encoder.hpp"
#include "uqtf/graph.hpp"

using namespace uqtf;
using namespace uqtf::enc;
using ad::NodeP;

TEST_CASE("attention_map: zero features give the zero map") {
    auto a = attention_map(ad::constant(Tensor<double>({2, 4, 3})), AttentionForm::product);
    for (int64_t i = 0; i < a->value.numel(); ++i) CHECK(a->value.at(i) == 0.0);
}

TEST_CASE("attention_map: orthogonal unit features") {
    // columns of pooled = orthogonal unit vectors -> off-diagonal zero,
    // diagonal tanh(1/sqrt(n))
    const int64_t c = 4, v = 4;
    Tensor<double> pooled({1, c, v});
    for (int64_t i = 0; i < v; ++i) pooled.at3(0, i, i) = 1.0;
    auto a = attention_map(ad::constant(pooled), AttentionForm::product);
    const double diag = std::tanh(1.0 / std::sqrt(static_cast<double>(c)));
    for (int64_t i = 0; i < v; ++i)
        for (int64_t j = 0; j < v; ++j)
            CHECK(a->value.at3(0, i, j) == doctest::Approx(i == j ? diag : 0.0).epsilon(1e-12));
}

TEST_CASE("attention_map: random features match the double-loop oracle, symmetric, bounded") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        const int64_t B = 2, C = 5, V = 6;
        auto pooled = testutil::random_normal<double>({B, C, V}, 1500 + seed);
        auto a = attention_map(ad::constant(pooled), AttentionForm::product);
        for (int64_t b = 0; b < B; ++b)
            for (int64_t i = 0; i < V; ++i)
                for (int64_t j = 0; j < V; ++j) {
                    double dot = 0;
                    for (int64_t cc = 0; cc < C; ++cc)
                        dot += pooled.at3(b, cc, i) * pooled.at3(b, cc, j);
                    const double expect = std::tanh(dot / std::sqrt(static_cast<double>(C)));
                    const double got = a->value.at3(b, i, j);
                    CHECK(std::abs(got - expect) < 1e-6);
                    CHECK(std::abs(got - a->value.at3(b, j, i)) < 1e-6);  // symmetry
                    CHECK(got > -1.0);
                    CHECK(got < 1.0);
                }
    }
}

TEST_CASE("attention_map: subtract form is antisymmetric") {
    auto pooled = testutil::random_normal<double>({1, 3, 4}, 1600);
    auto a = attention_map(ad::constant(pooled), AttentionForm::subtract);
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t j = 0; j < 4; ++j)
            CHECK(a->value.at3(0, i, j) == doctest::Approx(-a->value.at3(0, j, i)));
}

TEST_CASE("spatial_gcn: gate 0 with identity adjacency and identity weights") {
    const int64_t C = 3, T = 4, V = 3;
    auto x = testutil::random_normal<double>({1, C, T, V}, 1700);
    Tensor<double> eye({V, V});
    for (int64_t i = 0; i < V; ++i) eye.at2(i, i) = 1.0;
    Tensor<double> wid({C, C});
    for (int64_t i = 0; i < C; ++i) wid.at2(i, i) = 1.0;
    auto att = attention_map(ad::time_mean(ad::constant(x)), AttentionForm::product);
    auto g = spatial_gcn(ad::constant(x), eye, att, ad::constant(Tensor<double>::scalar(0.0)),
                         ad::constant(wid), nullptr);
    CHECK(testutil::max_abs_diff(g->value, x) < 1e-12);
}

TEST_CASE("spatial_gcn: all-ones attention averages nodes of a constant input") {
    const int64_t C = 2, T = 3, V = 4;
    Tensor<double> x = Tensor<double>::full({1, C, T, V}, 1.5);
    Tensor<double> zero_adj({V, V});
    Tensor<double> wid({C, C});
    for (int64_t i = 0; i < C; ++i) wid.at2(i, i) = 1.0;
    auto att = ad::constant(Tensor<double>::full({1, V, V}, 1.0 / V));
    auto g = spatial_gcn(ad::constant(x), zero_adj, att, ad::constant(Tensor<double>::scalar(1.0)),
                         ad::constant(wid), nullptr);
    for (int64_t i = 0; i < g->value.numel(); ++i)
        CHECK(g->value.at(i) == doctest::Approx(1.5).epsilon(1e-12));
}

TEST_CASE("spatial_gcn: random inputs match the explicit per-frame oracle") {
    const int64_t B = 2, Ci = 3, Co = 4, T = 5, V = 4;
    auto x = testutil::random_normal<double>({B, Ci, T, V}, 1800);
    auto w = testutil::random_normal<double>({Co, Ci}, 1801);
    auto adj = testutil::random_tensor<double>({V, V}, 1802, 0.0, 1.0);
    const double gate = 0.7;
    auto att = attention_map(ad::time_mean(ad::constant(x)), AttentionForm::product);
    auto g = spatial_gcn(ad::constant(x), adj, att, ad::constant(Tensor<double>::scalar(gate)),
                         ad::constant(w), nullptr);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t co = 0; co < Co; ++co)
            for (int64_t t = 0; t < T; ++t)
                for (int64_t v = 0; v < V; ++v) {
                    double acc = 0;
                    for (int64_t u = 0; u < V; ++u) {
                        double conv = 0;
                        for (int64_t ci = 0; ci < Ci; ++ci)
                            conv += w.at2(co, ci) * x.at4(b, ci, t, u);
                        acc += conv * (gate * att->value.at3(b, u, v) + adj.at2(u, v));
                    }
                    CHECK(g->value.at4(b, co, t, v) == doctest::Approx(acc).epsilon(1e-9));
                }
}

namespace {
Tensor<double> skeleton_adjacency(int objects) {
    return graph::model_adjacency(graph::build_adjacency(graph::default_layout(objects)));
}
}  // namespace

TEST_CASE("st_block: zero weights with identity residual reduce to ReLU") {
    ParameterStore<double> store;
    std::mt19937_64 rng(1);
    STBlockConfig cfg;
    cfg.c_in = cfg.c_out = 3;
    auto blk = STBlock<double>::create(store, "b", cfg, false, rng);
    // zero every weight; BN beta/gamma defaults give BN(0) = 0
    std::fill(blk.spatial_w->value.mutable_data(),
              blk.spatial_w->value.mutable_data() + blk.spatial_w->value.numel(), 0.0);
    std::fill(blk.temporal_w->value.mutable_data(),
              blk.temporal_w->value.mutable_data() + blk.temporal_w->value.numel(), 0.0);
    auto x = testutil::random_normal<double>({2, 3, 6, 16}, 1900);
    TapeCtx<double> ctx;
    auto y = blk.forward(ctx, ad::constant(x), skeleton_adjacency(4), AttentionForm::product);
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(y->value.at(i) == doctest::Approx(std::max(0.0, x.at(i))).epsilon(1e-12));
}

TEST_CASE("st_block: stride 2 halves the frame axis") {
    ParameterStore<double> store;
    std::mt19937_64 rng(2);
    STBlockConfig cfg;
    cfg.c_in = 3;
    cfg.c_out = 4;
    cfg.temporal_stride = 2;
    cfg.residual = ResidualKind::projection;
    auto blk = STBlock<double>::create(store, "b", cfg, false, rng);
    auto x = testutil::random_normal<double>({1, 3, 120, 16}, 1901);
    TapeCtx<double> ctx;
    auto y = blk.forward(ctx, ad::constant(x), skeleton_adjacency(4), AttentionForm::product);
    CHECK(y->value.dim(2) == 60);
}

TEST_CASE("encoder: all-zero input with zero biases stays zero (V=1)") {
    graph::NodeLayout single;
    single.joint_names = {"only"};
    single.center = 0;
    auto adj = graph::model_adjacency(graph::build_adjacency(single));

    EncoderConfig cfg;
    for (int i = 0; i < 3; ++i) {
        STBlockConfig b;
        b.c_in = i == 0 ? 2 : 4;
        b.c_out = 4;
        b.residual = i == 0 ? ResidualKind::projection : ResidualKind::identity;
        cfg.blocks.push_back(b);
    }
    ParameterStore<double> store;
    std::mt19937_64 rng(3);
    auto enc = Encoder<double>::create(store, cfg, false, rng);
    TapeCtx<double> ctx;
    auto y = enc.forward(ctx, ad::constant(Tensor<double>({2, 2, 8, 1})), adj);
    for (int64_t i = 0; i < y->value.numel(); ++i) CHECK(y->value.at(i) == 0.0);
}

TEST_CASE("encoder: shape contract and batch independence at eval") {
    auto layout = graph::default_layout(4);
    auto adj = skeleton_adjacency(4);
    auto cfg = EncoderConfig::desk_default(3, ResidualKind::identity);
    ParameterStore<double> store;
    std::mt19937_64 rng(4);
    auto enc = Encoder<double>::create(store, cfg, false, rng);
    REQUIRE(cfg.downsample() == 4);

    auto record = testutil::random_normal<double>({1, 3, 24, 16}, 2000);
    // warm the running statistics so eval mode is meaningful
    {
        TapeCtx<double> ctx;
        ctx.training = true;
        enc.forward(ctx, ad::constant(record), adj);
    }
    TapeCtx<double> ev;
    ev.training = false;
    auto single = enc.forward(ev, ad::constant(record), adj);
    CHECK(single->value.dim(2) == 6);  // 24 / 4

    // duplicate the record in the batch: per-record outputs stay equal
    Tensor<double> doubled({2, 3, 24, 16});
    for (int64_t i = 0; i < record.numel(); ++i) {
        doubled.at(i) = record.at(i);
        doubled.at(record.numel() + i) = record.at(i);
    }
    TapeCtx<double> ev2;
    ev2.training = false;
    auto both = enc.forward(ev2, ad::constant(doubled), adj);
    for (int64_t i = 0; i < single->value.numel(); ++i) {
        CHECK(both->value.at(i) == doctest::Approx(single->value.at(i)).epsilon(1e-12));
        CHECK(both->value.at(single->value.numel() + i) ==
              doctest::Approx(single->value.at(i)).epsilon(1e-12));
    }
}

TEST_CASE("encoder: node permutation equivariance at eval") {
    const int64_t V = 16;
    auto adj = skeleton_adjacency(4);
    EncoderConfig cfg;
    {
        STBlockConfig b;
        b.c_in = 3;
        b.c_out = 5;
        b.residual = ResidualKind::projection;
        cfg.blocks.push_back(b);
        STBlockConfig b2;
        b2.c_in = 5;
        b2.c_out = 5;
        cfg.blocks.push_back(b2);
    }
    ParameterStore<double> store;
    std::mt19937_64 rng(5);
    auto enc = Encoder<double>::create(store, cfg, false, rng);

    auto x = testutil::random_normal<double>({1, 3, 10, V}, 2100);
    {
        TapeCtx<double> warm;
        enc.forward(warm, ad::constant(x), adj);
    }
    TapeCtx<double> ev;
    ev.training = false;
    auto y = enc.forward(ev, ad::constant(x), adj);

    std::vector<int64_t> perm(V);
    for (int64_t i = 0; i < V; ++i) perm[static_cast<size_t>(i)] = i;
    std::shuffle(perm.begin(), perm.end(), rng);

    Tensor<double> px(x.shape());
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t t = 0; t < 10; ++t)
            for (int64_t v = 0; v < V; ++v)
                px.at4(0, c, t, perm[static_cast<size_t>(v)]) = x.at4(0, c, t, v);
    Tensor<double> padj({V, V});
    for (int64_t i = 0; i < V; ++i)
        for (int64_t j = 0; j < V; ++j)
            padj.at2(perm[static_cast<size_t>(i)], perm[static_cast<size_t>(j)]) = adj.at2(i, j);

    TapeCtx<double> ev2;
    ev2.training = false;
    auto py = enc.forward(ev2, ad::constant(px), padj);
    for (int64_t c = 0; c < 5; ++c)
        for (int64_t t = 0; t < 10; ++t)
            for (int64_t v = 0; v < V; ++v)
                CHECK(py->value.at4(0, c, t, perm[static_cast<size_t>(v)]) ==
                      doctest::Approx(y->value.at4(0, c, t, v)).epsilon(1e-9));
}

TEST_CASE("encoder config validation") {
    auto cfg = EncoderConfig::desk_default(3, ResidualKind::identity);
    cfg.blocks[3].c_in = 99;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);

    auto cfg2 = EncoderConfig::desk_default(3, ResidualKind::identity);
    cfg2.blocks[4].residual = ResidualKind::identity;  // stride-2 block
    CHECK_THROWS_AS(cfg2.validate(), ConfigError);

    // degenerate input: fewer frames than the downsampling factor
    ParameterStore<double> store;
    std::mt19937_64 rng(6);
    auto enc =
        Encoder<double>::create(store, EncoderConfig::desk_default(3, ResidualKind::identity),
                                false, rng);
    TapeCtx<double> ctx;
    CHECK_THROWS_AS(enc.forward(ctx, ad::constant(Tensor<double>({1, 3, 2, 16})),
                                skeleton_adjacency(4)),
                    ShapeError);
}
