#pragma once

// The full network: encoder over the HOI graph, temporal fusion decoder,
// framewise logits. Inputs whose frame count is not divisible by the encoder
// downsampling factor are edge-padded and the logits sliced back.

#include "uqtf/decoder.hpp"
#include "uqtf/encoder.hpp"
#include "uqtf/graph.hpp"

namespace uqtf {

enum class ResidualArm { none, plain, sn };

inline const char* residual_arm_name(ResidualArm a) {
    switch (a) {
        case ResidualArm::none: return "none";
        case ResidualArm::plain: return "plain";
        default: return "sn";
    }
}

struct ModelConfig {
    int64_t in_channels = 3;
    int64_t classes = 5;
    enc::EncoderConfig encoder;
    dec::DecoderConfig decoder;
    ResidualArm arm = ResidualArm::plain;
    double sn_c = 3.0;
    graph::AdjNorm adj_norm = graph::AdjNorm::symmetric;

    static ModelConfig desk_default(int64_t classes, ResidualArm arm, int64_t in_channels = 3) {
        ModelConfig cfg;
        cfg.in_channels = in_channels;
        cfg.classes = classes;
        cfg.arm = arm;
        cfg.encoder = enc::EncoderConfig::desk_default(
            in_channels,
            arm == ResidualArm::none ? enc::ResidualKind::none : enc::ResidualKind::identity);
        cfg.decoder.enc_channels = cfg.encoder.out_channels();
        cfg.decoder.fusion_channels = cfg.encoder.out_channels();
        cfg.decoder.classifier_hidden = cfg.encoder.out_channels();
        cfg.decoder.classes = classes;
        return cfg;
    }
};

template <typename S>
class Model {
  public:
    ModelConfig cfg;
    ParameterStore<S> store;
    enc::Encoder<S> encoder;
    dec::Decoder<S> decoder;
    Tensor<S> adjacency;  // V x V static component of the spatial layer

    Model() = default;
    Model(const Model&) = delete;
    Model& operator=(const Model&) = delete;
    Model(Model&&) = default;
    Model& operator=(Model&&) = default;

    static Model build(const ModelConfig& cfg, const graph::NodeLayout& layout, uint64_t seed) {
        Model m;
        m.cfg = cfg;
        m.adjacency =
            graph::model_adjacency(graph::build_adjacency(layout), cfg.adj_norm).template cast<S>();
        std::mt19937_64 rng(seed);
        const bool sn = cfg.arm == ResidualArm::sn;
        m.encoder = enc::Encoder<S>::create(m.store, cfg.encoder, sn, rng);
        m.decoder = dec::Decoder<S>::create(m.store, cfg.decoder, layout.node_count(), sn, rng);
        return m;
    }

    TapeCtx<S> make_ctx(bool training, bool track_grads = true) const {
        TapeCtx<S> ctx;
        ctx.training = training;
        ctx.track_grads = track_grads;
        ctx.sn_enabled = cfg.arm == ResidualArm::sn;
        ctx.sn_c = static_cast<S>(cfg.sn_c);
        ctx.sn_mode = training ? SnMode::train : SnMode::eval;
        return ctx;
    }

    struct Output {
        ad::NodeP<S> logits;       // [B x n x T]
        ad::NodeP<S> penultimate;  // [B x c x T x 1]
        std::vector<ad::NodeP<S>> encoder_activations;
    };

    Output forward(TapeCtx<S>& ctx, const Tensor<S>& batch,
                   bool keep_activations = false) const {
        if (batch.rank() != 4) throw ShapeError("model: input must be [B x C x T x V]");
        const int64_t t_in = batch.dim(2);
        const int ds = cfg.encoder.downsample();
        const int64_t t_pad = (t_in + ds - 1) / ds * ds;

        auto x = ad::constant(batch);
        if (t_pad != t_in) x = ad::pad_time_edge(x, t_pad);

        Output out;
        auto encoded = encoder.forward(ctx, x, adjacency,
                                       keep_activations ? &out.encoder_activations : nullptr);
        auto dec_out = decoder.forward(ctx, encoded, t_pad);
        auto logits = dec_out.logits;
        auto feat = dec_out.penultimate;
        if (t_pad != t_in) {
            const auto& ls = logits->value.shape();
            logits = ad::reshape(
                ad::slice_time(ad::reshape(logits, {ls[0], ls[1], ls[2], 1}), t_in),
                {ls[0], ls[1], t_in});
            feat = ad::slice_time(feat, t_in);
        }
        out.logits = logits;
        out.penultimate = feat;
        return out;
    }
};

}  // namespace uqtf
