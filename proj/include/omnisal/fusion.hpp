#pragma once

#include "omnisal/backbone.hpp"

namespace omnisal::fusion {

/// Feature maps in the decoder are (batch, channels, height, width) vars.
using FeatureMap = Var;

/// (B, L, C) tokens on an r×c grid -> (B, C, r, c) map.
FeatureMap tokens_to_map(const core::TokenSequence& tokens);

/// One cross-attention layer; the same weights serve both directions.
struct CrossAttentionLayer {
    LayerNorm norm_attn;
    Linear q, k, v, o;
    LayerNorm norm_mlp;
    Linear fc1, fc2;
    int64_t heads = 1;

    static CrossAttentionLayer create(ParamStore& store, const std::string& name, int64_t dim, int64_t heads,
                                      double mlp_ratio, Rng& rng);
};

/// Top-level token fusion: RGB queries attend to auxiliary keys/values and
/// vice versa, each stream with its own residual + MLP; the streams are then
/// summed and normalized.
class TokenFusion {
public:
    TokenFusion(const ModelConfig& config, ParamStore& store, Rng& rng);

    struct Streams {
        Var rgb;
        Var aux;
    };

    /// Both directional streams after every layer, before the merge.
    Streams streams(const core::TokenSequence& rgb, const core::TokenSequence& aux) const;
    core::TokenSequence operator()(const core::TokenSequence& rgb, const core::TokenSequence& aux) const;

    /// Sum of the final streams without the output norm.
    static Var merge(const Streams& s);

private:
    std::vector<CrossAttentionLayer> layers_;
    LayerNorm out_norm_;
};

/// Channel attention followed by spatial attention, both sigmoid-gated.
struct Cbam {
    Linear fc1;  // C -> C / r, no bias
    Linear fc2;  // C / r -> C, no bias
    Conv2d spatial;

    static Cbam create(ParamStore& store, const std::string& name, int64_t channels, int64_t reduction,
                       int64_t spatial_kernel, Rng& rng);

    /// (B, C, 1, 1) gate from average- and max-pooled descriptors.
    Var channel_gate(const FeatureMap& f) const;
    /// (B, 1, H, W) gate from channel-mean and channel-max maps.
    Var spatial_gate(const FeatureMap& f) const;
    FeatureMap operator()(const FeatureMap& f) const;
};

/// CBAM over the deeper feature plus the cross-modal sum and product of the
/// two skip features, then two conv + ReLU blocks.
struct FeatureFusion {
    Cbam cbam;
    Conv2d conv1, conv2;

    static FeatureFusion create(ParamStore& store, const std::string& name, const ModelConfig& config, Rng& rng);
    FeatureMap operator()(const FeatureMap& f_up, const FeatureMap& s_rgb, const FeatureMap& s_aux) const;
};

/// Ablation baseline decoder stage: two conv + ReLU blocks over the plain sum.
struct DualConv {
    Conv2d conv1, conv2;

    static DualConv create(ParamStore& store, const std::string& name, int64_t channels, Rng& rng);
    FeatureMap operator()(const FeatureMap& f_up, const FeatureMap& s_rgb, const FeatureMap& s_aux) const;
};

/// Fuses the three decoder levels at the finest resolution: per-level
/// 3×3 conv, channel attention over the concatenation, 1×1 fusion conv.
struct MultiLevelFusion {
    std::array<Conv2d, 3> level;
    Linear fc1, fc2;
    Conv2d fuse;

    static MultiLevelFusion create(ParamStore& store, const std::string& name, const ModelConfig& config, Rng& rng);
    /// f1 coarsest, f3 finest; output has f3's size.
    FeatureMap operator()(const FeatureMap& f1, const FeatureMap& f2, const FeatureMap& f3) const;
};

struct PredictionHead {
    Conv2d conv;

    static PredictionHead create(ParamStore& store, const std::string& name, int64_t channels, Rng& rng);
    Var logits(const FeatureMap& f) const;
    /// sigmoid(upsample(logits)) at out_size × out_size.
    Var operator()(const FeatureMap& f, int64_t out_size) const;
};

/// sigmoid(bilinear(logits)): the head without its convolution.
Var saliency_from_logits(const Var& logits, int64_t out_size);

}  // namespace omnisal::fusion
