#pragma once

// Temporal fusion decoder: a global feature extractor (three inverted
// bottlenecks followed by four parallel temporal-pyramid pools merged through
// a 1x1 conv with a temporal residual), a feature-fusion stage that
// upsamples to the original time scale and adds a spectral-normalizable
// residual path from the encoder features, and a classifier that collapses
// the node axis with two depthwise-separable stages before the class map.

#include <array>
#include <random>
#include <string>

#include "uqtf/params.hpp"

namespace uqtf::dec {

struct DecoderConfig {
    int64_t enc_channels = 32;
    int bottleneck_expansion = 2;
    std::array<int64_t, 4> tpp_bins = {1, 2, 4, 8};
    int64_t fusion_channels = 32;
    int64_t classifier_hidden = 32;
    int64_t classes = 5;
    int temporal_kernel = 9;
    // ablation arms: a disabled extractor passes features through, a disabled
    // fusion falls back to plain interpolation, a disabled classifier averages
    // over nodes before the class map
    bool global_feature_extractor = true;
    bool temporal_feature_fusion = true;
    bool classifier = true;

    void validate() const {
        if (bottleneck_expansion < 1) throw ConfigError("decoder: expansion ratio must be >= 1");
        if (classes < 2) throw ConfigError("decoder: need at least two classes");
        for (int64_t b : tpp_bins)
            if (b < 1) throw ConfigError("decoder: TPP bins must be positive");
        if (classifier_hidden < 1 || fusion_channels < 1 || enc_channels < 1)
            throw ConfigError("decoder: channel widths must be positive");
    }

    int64_t classifier_in_channels() const {
        return temporal_feature_fusion ? fusion_channels : enc_channels;
    }
};

template <typename S>
struct Bottleneck {
    Parameter<S>*expand_w, *expand_b, *dw_w, *dw_b, *project_w, *project_b;
    int temporal_kernel;

    static Bottleneck create(ParameterStore<S>& store, const std::string& prefix, int64_t c,
                             int expansion, int k, std::mt19937_64& rng) {
        Bottleneck bt;
        bt.temporal_kernel = k;
        const int64_t ce = c * expansion;
        bt.expand_w = &store.add(prefix + ".expand.w", {ce, c});
        init_he_normal(bt.expand_w->value, c, rng);
        bt.expand_b = &store.add(prefix + ".expand.b", {ce});
        bt.dw_w = &store.add(prefix + ".dw.w", {ce, k});
        init_he_normal(bt.dw_w->value, k, rng);
        bt.dw_b = &store.add(prefix + ".dw.b", {ce});
        bt.project_w = &store.add(prefix + ".project.w", {c, ce});
        init_glorot_normal(bt.project_w->value, ce, c, rng);
        bt.project_b = &store.add(prefix + ".project.b", {c});
        return bt;
    }

    ad::NodeP<S> forward(TapeCtx<S>& ctx, const ad::NodeP<S>& x) const {
        auto h = ad::relu(ad::channel_map(x, ctx.use(expand_w), ctx.use(expand_b)));
        h = ad::relu(ad::depthwise_temporal_conv(h, ctx.use(dw_w), ctx.use(dw_b), 1,
                                                 (temporal_kernel - 1) / 2));
        h = ad::channel_map(h, ctx.use(project_w), ctx.use(project_b));  // linear projection
        return ad::add(x, h);
    }
};

template <typename S>
struct Decoder {
    DecoderConfig cfg;
    int64_t nodes = 0;

    std::vector<Bottleneck<S>> bottlenecks;
    Parameter<S>*tpp_w = nullptr, *tpp_b = nullptr;

    Parameter<S>*fuse_dw_w = nullptr, *fuse_dw_b = nullptr;
    Parameter<S>*fuse_pw_w = nullptr, *fuse_pw_b = nullptr;
    Parameter<S>*fuse_conv_w = nullptr, *fuse_conv_b = nullptr;
    Parameter<S>*fuse_res_w = nullptr, *fuse_res_b = nullptr;  // spectral-normalizable

    Parameter<S>*cls1_dw_w = nullptr, *cls1_dw_b = nullptr;
    Parameter<S>*cls1_pw_w = nullptr, *cls1_pw_b = nullptr;
    Parameter<S>*cls2_dw_w = nullptr, *cls2_dw_b = nullptr;
    Parameter<S>*cls2_pw_w = nullptr, *cls2_pw_b = nullptr;
    Parameter<S>*out_w = nullptr, *out_b = nullptr;

    int64_t cls1_kernel = 1, cls1_stride = 1, cls1_out_nodes = 1;

    static Decoder create(ParameterStore<S>& store, const DecoderConfig& cfg, int64_t nodes,
                          bool sn_on_residual, std::mt19937_64& rng) {
        cfg.validate();
        Decoder d;
        d.cfg = cfg;
        d.nodes = nodes;
        const int64_t c = cfg.enc_channels;
        const int k = cfg.temporal_kernel;

        if (cfg.global_feature_extractor) {
            for (int i = 0; i < 3; ++i)
                d.bottlenecks.push_back(Bottleneck<S>::create(
                    store, "dec.bottleneck" + std::to_string(i + 1), c, cfg.bottleneck_expansion,
                    k, rng));
            d.tpp_w = &store.add("dec.tpp.w", {c, 4 * c});
            init_glorot_normal(d.tpp_w->value, 4 * c, c, rng);
            d.tpp_b = &store.add("dec.tpp.b", {c});
        }

        if (cfg.temporal_feature_fusion) {
            d.fuse_dw_w = &store.add("dec.fuse.dw.w", {c, k});
            init_glorot_normal(d.fuse_dw_w->value, k, k, rng);
            d.fuse_dw_b = &store.add("dec.fuse.dw.b", {c});
            d.fuse_pw_w = &store.add("dec.fuse.pw.w", {cfg.fusion_channels, c});
            init_glorot_normal(d.fuse_pw_w->value, c, cfg.fusion_channels, rng);
            d.fuse_pw_b = &store.add("dec.fuse.pw.b", {cfg.fusion_channels});
            d.fuse_conv_w = &store.add("dec.fuse.conv.w", {cfg.fusion_channels, cfg.fusion_channels});
            init_glorot_normal(d.fuse_conv_w->value, cfg.fusion_channels, cfg.fusion_channels, rng);
            d.fuse_conv_b = &store.add("dec.fuse.conv.b", {cfg.fusion_channels});
            d.fuse_res_w = &store.add("dec.fuse.res.w", {cfg.fusion_channels, c});
            init_glorot_normal(d.fuse_res_w->value, c, cfg.fusion_channels, rng);
            d.fuse_res_w->spectral_norm = sn_on_residual;
            d.fuse_res_b = &store.add("dec.fuse.res.b", {cfg.fusion_channels});
        }

        const int64_t ci = cfg.classifier_in_channels();
        const int64_t h = cfg.classifier_hidden;
        if (cfg.classifier) {
            d.cls1_kernel = (nodes + 1) / 2;
            d.cls1_stride = std::max<int64_t>(1, nodes - d.cls1_kernel);
            d.cls1_out_nodes = (nodes - d.cls1_kernel) / d.cls1_stride + 1;
            d.cls1_dw_w = &store.add("dec.cls1.dw.w", {ci, d.cls1_kernel});
            init_he_normal(d.cls1_dw_w->value, d.cls1_kernel, rng);
            d.cls1_dw_b = &store.add("dec.cls1.dw.b", {ci});
            d.cls1_pw_w = &store.add("dec.cls1.pw.w", {h, ci});
            init_he_normal(d.cls1_pw_w->value, ci, rng);
            d.cls1_pw_b = &store.add("dec.cls1.pw.b", {h});
            d.cls2_dw_w = &store.add("dec.cls2.dw.w", {h, d.cls1_out_nodes});
            init_he_normal(d.cls2_dw_w->value, d.cls1_out_nodes, rng);
            d.cls2_dw_b = &store.add("dec.cls2.dw.b", {h});
            d.cls2_pw_w = &store.add("dec.cls2.pw.w", {h, h});
            init_he_normal(d.cls2_pw_w->value, h, rng);
            d.cls2_pw_b = &store.add("dec.cls2.pw.b", {h});
            d.out_w = &store.add("dec.out.w", {cfg.classes, h});  // zero: logits start uniform
            d.out_b = &store.add("dec.out.b", {cfg.classes});
        } else {
            d.out_w = &store.add("dec.out.w", {cfg.classes, ci});
            d.out_b = &store.add("dec.out.b", {cfg.classes});
        }
        return d;
    }

    // Bottlenecks then the four-scale pyramid pool, merged by a 1x1 conv and
    // a temporal residual.
    ad::NodeP<S> global_features(TapeCtx<S>& ctx, const ad::NodeP<S>& enc) const {
        auto h = enc;
        for (const auto& bt : bottlenecks) h = bt.forward(ctx, h);
        const int64_t tp = h->value.dim(2);
        for (int64_t b : cfg.tpp_bins)
            if (tp < b)
                throw ConfigError("decoder: condensed length " + std::to_string(tp) +
                                  " is below TPP bin count " + std::to_string(b));
        std::vector<ad::NodeP<S>> branches;
        for (int64_t b : cfg.tpp_bins) branches.push_back(ad::tpp_pool_broadcast(h, b));
        auto cat = ad::concat_channels(branches);
        auto merged = ad::channel_map(cat, ctx.use(tpp_w), ctx.use(tpp_b));
        return ad::add(merged, h);
    }

    // Main path: interpolate, depthwise-separable conv, 1x1 conv. Residual
    // path: 1x1 conv (spectral-normalized) on the raw encoder features, then
    // interpolation. Fusion is their sum.
    ad::NodeP<S> feature_fusion(TapeCtx<S>& ctx, const ad::NodeP<S>& low, const ad::NodeP<S>& enc,
                                int64_t t_out) const {
        auto main = ad::interpolate_time(low, t_out);
        main = ad::depthwise_temporal_conv(main, ctx.use(fuse_dw_w), ctx.use(fuse_dw_b), 1,
                                           (cfg.temporal_kernel - 1) / 2);
        main = ad::channel_map(main, ctx.use(fuse_pw_w), ctx.use(fuse_pw_b));
        main = ad::channel_map(main, ctx.use(fuse_conv_w), ctx.use(fuse_conv_b));
        auto res = ad::channel_map(enc, ctx.use(fuse_res_w), ctx.use(fuse_res_b));
        res = ad::interpolate_time(res, t_out);
        return ad::add(main, res);
    }

    struct Output {
        ad::NodeP<S> logits;       // [B x n x T]
        ad::NodeP<S> penultimate;  // [B x c x T x 1], input of the class map
    };

    Output classify(TapeCtx<S>& ctx, const ad::NodeP<S>& fused) const {
        ad::NodeP<S> feat;
        if (cfg.classifier) {
            auto h = ad::depthwise_node_conv(fused, ctx.use(cls1_dw_w), ctx.use(cls1_dw_b),
                                             cls1_stride);
            h = ad::relu(ad::channel_map(h, ctx.use(cls1_pw_w), ctx.use(cls1_pw_b)));
            h = ad::depthwise_node_conv(h, ctx.use(cls2_dw_w), ctx.use(cls2_dw_b), cls1_out_nodes);
            feat = ad::relu(ad::channel_map(h, ctx.use(cls2_pw_w), ctx.use(cls2_pw_b)));
        } else {
            feat = ad::mean_nodes(fused);
        }
        auto logits4 = ad::channel_map(feat, ctx.use(out_w), ctx.use(out_b));
        const auto& s = logits4->value.shape();
        Output out;
        out.logits = ad::reshape(logits4, {s[0], s[1], s[2]});
        out.penultimate = feat;
        return out;
    }

    Output forward(TapeCtx<S>& ctx, const ad::NodeP<S>& enc, int64_t t_out) const {
        auto low = cfg.global_feature_extractor ? global_features(ctx, enc) : enc;
        ad::NodeP<S> fused = cfg.temporal_feature_fusion
                                 ? feature_fusion(ctx, low, enc, t_out)
                                 : ad::interpolate_time(low, t_out);
        return classify(ctx, fused);
    }
};

}  // namespace uqtf::dec
