#pragma once

// Attention-based spatio-temporal graph convolutional encoder. A block runs
// spatial graph convolution (1x1 channel map, then node mixing with the gated
// attention map added to the static adjacency), batch normalization, a
// temporal convolution, and merges a residual side branch before the block
// ReLU. Ten blocks with a configurable channel schedule form the encoder.

#include <random>
#include <string>
#include <vector>

#include "uqtf/batchnorm.hpp"
#include "uqtf/params.hpp"

namespace uqtf::enc {

enum class ResidualKind { none, identity, projection };
enum class AttentionForm { product, subtract };

struct STBlockConfig {
    int64_t c_in = 0;
    int64_t c_out = 0;
    int temporal_stride = 1;
    int temporal_kernel = 9;
    ResidualKind residual = ResidualKind::identity;
    double gate_init = 0.0;  // attention gate starts at the static skeleton graph
};

struct EncoderConfig {
    std::vector<STBlockConfig> blocks;
    AttentionForm attention = AttentionForm::product;

    int downsample() const {
        int d = 1;
        for (const auto& b : blocks) d *= b.temporal_stride;
        return d;
    }

    int64_t out_channels() const { return blocks.empty() ? 0 : blocks.back().c_out; }

    void validate() const {
        if (blocks.empty()) throw ConfigError("encoder: no blocks configured");
        for (size_t i = 0; i < blocks.size(); ++i) {
            const auto& b = blocks[i];
            if (b.c_in < 1 || b.c_out < 1) throw ConfigError("encoder: bad channel count");
            if (b.temporal_stride != 1 && b.temporal_stride != 2)
                throw ConfigError("encoder: stride must be 1 or 2");
            if (b.temporal_kernel < 1 || b.temporal_kernel % 2 == 0)
                throw ConfigError("encoder: temporal kernel must be odd");
            if (i > 0 && blocks[i - 1].c_out != b.c_in)
                throw ConfigError("encoder: channel chain mismatch at block " + std::to_string(i));
            if (b.residual == ResidualKind::identity &&
                (b.c_in != b.c_out || b.temporal_stride != 1))
                throw ConfigError("encoder: identity residual needs matching channels and stride 1");
        }
    }

    // 10 blocks at 1/8 width of the conventional layout, stride 2 at blocks
    // 5 and 8. Residuals are projections wherever identity is not possible.
    static EncoderConfig desk_default(int64_t in_channels, ResidualKind arm) {
        const int64_t ch[10] = {8, 8, 8, 16, 16, 16, 32, 32, 32, 32};
        EncoderConfig cfg;
        int64_t prev = in_channels;
        for (int i = 0; i < 10; ++i) {
            STBlockConfig b;
            b.c_in = prev;
            b.c_out = ch[i];
            b.temporal_stride = (i == 4 || i == 7) ? 2 : 1;
            if (arm == ResidualKind::none) {
                b.residual = ResidualKind::none;
            } else {
                b.residual = (b.c_in == b.c_out && b.temporal_stride == 1)
                                 ? ResidualKind::identity
                                 : ResidualKind::projection;
            }
            cfg.blocks.push_back(b);
            prev = ch[i];
        }
        return cfg;
    }
};

// a_ij = tanh(f_i . f_j / sqrt(n)) with n the feature length (product form),
// or tanh(fbar_i - fbar_j) (subtract form). pooled is [B x C x V].
template <typename S>
ad::NodeP<S> attention_map(const ad::NodeP<S>& pooled, AttentionForm form) {
    if (form == AttentionForm::product) {
        const S inv_sqrt_n = S(1) / std::sqrt(static_cast<S>(pooled->value.dim(1)));
        return ad::tanh_act(ad::scale_const(ad::node_gram(pooled), inv_sqrt_n));
    }
    return ad::tanh_act(ad::pair_diff(ad::channel_mean(pooled)));
}

// G_s = Conv1x1(G_in) * (a * A_att + A), node mixing per frame.
template <typename S>
ad::NodeP<S> spatial_gcn(const ad::NodeP<S>& x, const Tensor<S>& a_static,
                         const ad::NodeP<S>& a_att, const ad::NodeP<S>& gate,
                         const ad::NodeP<S>& w, const std::type_identity_t<ad::NodeP<S>>& bias) {
    auto mixed = ad::gated_adjacency(a_att, gate, a_static);
    return ad::node_mix(ad::channel_map(x, w, bias), mixed);
}

template <typename S>
struct STBlock {
    STBlockConfig cfg;
    Parameter<S>* spatial_w = nullptr;
    Parameter<S>* spatial_b = nullptr;
    BatchNorm<S> bn;
    Parameter<S>* temporal_w = nullptr;
    // the temporal layer is a 9-wide convolution plus batch norm, the same
    // unit the ST-GCN line uses (the norm owns the shift, so the convolution
    // carries no bias); the residual branch stays unnormalized
    BatchNorm<S> temporal_bn;
    Parameter<S>* res_w = nullptr;  // projection residual, [c_out x c_in]
    Parameter<S>* res_b = nullptr;
    Parameter<S>* gate = nullptr;

    static STBlock create(ParameterStore<S>& store, const std::string& prefix,
                          const STBlockConfig& cfg, bool sn_on_residual, std::mt19937_64& rng) {
        STBlock blk;
        blk.cfg = cfg;
        blk.spatial_w = &store.add(prefix + ".spatial.w", {cfg.c_out, cfg.c_in});
        init_he_normal(blk.spatial_w->value, cfg.c_in, rng);
        blk.spatial_b = &store.add(prefix + ".spatial.b", {cfg.c_out});
        blk.bn = BatchNorm<S>::create(store, prefix + ".bn", cfg.c_out);
        blk.temporal_w =
            &store.add(prefix + ".temporal.w", {cfg.c_out, cfg.c_out, cfg.temporal_kernel});
        init_he_normal(blk.temporal_w->value, cfg.c_out * cfg.temporal_kernel, rng);
        blk.temporal_bn = BatchNorm<S>::create(store, prefix + ".temporal.bn", cfg.c_out);
        if (cfg.residual == ResidualKind::projection) {
            blk.res_w = &store.add(prefix + ".res.w", {cfg.c_out, cfg.c_in});
            init_he_normal(blk.res_w->value, cfg.c_in, rng);
            blk.res_w->spectral_norm = sn_on_residual;
            blk.res_b = &store.add(prefix + ".res.b", {cfg.c_out});
        }
        blk.gate = &store.add(prefix + ".gate", {1});
        blk.gate->value.mutable_data()[0] = static_cast<S>(cfg.gate_init);
        return blk;
    }

    ad::NodeP<S> forward(TapeCtx<S>& ctx, const ad::NodeP<S>& x, const Tensor<S>& a_static,
                         AttentionForm form) const {
        auto att = attention_map(ad::time_mean(x), form);
        auto h = spatial_gcn(x, a_static, att, ctx.use(gate), ctx.use(spatial_w),
                             ctx.use(spatial_b));
        h = bn(ctx, h);
        const int64_t pad = (cfg.temporal_kernel - 1) / 2;
        h = ad::temporal_conv(h, ctx.use(temporal_w), nullptr, cfg.temporal_stride, pad);
        h = temporal_bn(ctx, h);
        switch (cfg.residual) {
            case ResidualKind::none:
                break;
            case ResidualKind::identity:
                h = ad::add(h, x);
                break;
            case ResidualKind::projection: {
                auto w3 = ad::reshape(ctx.use(res_w), {cfg.c_out, cfg.c_in, 1});
                auto r = ad::relu(
                    ad::temporal_conv(x, w3, ctx.use(res_b), cfg.temporal_stride, 0));
                h = ad::add(h, r);
                break;
            }
        }
        return ad::relu(h);
    }
};

template <typename S>
struct Encoder {
    EncoderConfig cfg;
    std::vector<STBlock<S>> blocks;

    static Encoder create(ParameterStore<S>& store, const EncoderConfig& cfg, bool sn_on_residual,
                          std::mt19937_64& rng) {
        cfg.validate();
        Encoder e;
        e.cfg = cfg;
        for (size_t i = 0; i < cfg.blocks.size(); ++i)
            e.blocks.push_back(STBlock<S>::create(store, "enc.block" + std::to_string(i + 1),
                                                  cfg.blocks[i], sn_on_residual, rng));
        return e;
    }

    // Per-block activations are exposed for the probe tooling.
    ad::NodeP<S> forward(TapeCtx<S>& ctx, const ad::NodeP<S>& x, const Tensor<S>& a_static,
                         std::vector<ad::NodeP<S>>* activations = nullptr) const {
        if (x->value.dim(2) < cfg.downsample())
            throw ShapeError("encoder: input has fewer frames than the downsampling factor");
        auto h = x;
        for (const auto& blk : blocks) {
            h = blk.forward(ctx, h, a_static, cfg.attention);
            if (activations) activations->push_back(h);
        }
        return h;
    }
};

}  // namespace uqtf::enc
