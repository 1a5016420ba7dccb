#include "omnisal/fusion.hpp"

#include <algorithm>

#include "omnisal/ops.hpp"

namespace omnisal::fusion {

using core::TokenSequence;

FeatureMap tokens_to_map(const TokenSequence& tokens) {
    tokens.check();
    auto chw = ops::permute(tokens.values, {0, 2, 1});
    return ops::reshape(chw, {tokens.batch(), tokens.channels(), tokens.rows, tokens.cols});
}

namespace {

void require_same_map(const FeatureMap& a, const FeatureMap& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

Var conv_relu(const Conv2d& conv, const Var& x) { return ops::relu(conv(x)); }

// Shared two-layer MLP over avg- and max-pooled descriptors, summed, sigmoid.
Var pooled_gate(const Linear& fc1, const Linear& fc2, const FeatureMap& f) {
    const int64_t b = f.dim(0), c = f.dim(1);
    auto path = [&](const Var& pooled) { return fc2(ops::relu(fc1(ops::reshape(pooled, {b, c})))); };
    auto logits = ops::add(path(ops::global_avg_pool(f)), path(ops::global_max_pool(f)));
    return ops::reshape(ops::sigmoid(logits), {b, c, 1, 1});
}

}  // namespace

CrossAttentionLayer CrossAttentionLayer::create(ParamStore& store, const std::string& name, int64_t dim,
                                                int64_t heads, double mlp_ratio, Rng& rng) {
    const auto hidden = static_cast<int64_t>(static_cast<double>(dim) * mlp_ratio);
    CrossAttentionLayer l;
    l.norm_attn = LayerNorm::create(store, name + ".norm1", dim);
    l.q = Linear::create(store, name + ".attn.q", dim, dim, true, rng);
    l.k = Linear::create(store, name + ".attn.k", dim, dim, true, rng);
    l.v = Linear::create(store, name + ".attn.v", dim, dim, true, rng);
    l.o = Linear::create(store, name + ".attn.proj", dim, dim, true, rng);
    l.norm_mlp = LayerNorm::create(store, name + ".norm2", dim);
    l.fc1 = Linear::create(store, name + ".mlp.fc1", dim, hidden, true, rng);
    l.fc2 = Linear::create(store, name + ".mlp.fc2", hidden, dim, true, rng);
    l.heads = heads;
    return l;
}

TokenFusion::TokenFusion(const ModelConfig& config, ParamStore& store, Rng& rng) {
    for (int64_t i = 0; i < config.tfm_depth; ++i) {
        layers_.push_back(CrossAttentionLayer::create(store, "tfm.layers." + std::to_string(i), config.reduced_dim,
                                                      config.tfm_heads, config.tfm_mlp_ratio, rng));
    }
    out_norm_ = LayerNorm::create(store, "tfm.norm", config.reduced_dim);
}

TokenFusion::Streams TokenFusion::streams(const TokenSequence& rgb, const TokenSequence& aux) const {
    rgb.check();
    aux.check();
    if (rgb.values.shape() != aux.values.shape() || rgb.rows != aux.rows) {
        throw ShapeError("token fusion: stream shapes differ " + shape_str(rgb.values.shape()) + " vs " +
                         shape_str(aux.values.shape()));
    }
    Var r = rgb.values;
    Var d = aux.values;
    for (const auto& l : layers_) {
        auto rn = l.norm_attn(r);
        auto dn = l.norm_attn(d);
        auto r_att = l.o(core::multi_head_attention(l.q(rn), l.k(dn), l.v(dn), l.heads));
        auto d_att = l.o(core::multi_head_attention(l.q(dn), l.k(rn), l.v(rn), l.heads));
        r = ops::add(r, r_att);
        d = ops::add(d, d_att);
        r = ops::add(r, l.fc2(ops::gelu(l.fc1(l.norm_mlp(r)))));
        d = ops::add(d, l.fc2(ops::gelu(l.fc1(l.norm_mlp(d)))));
    }
    return {r, d};
}

Var TokenFusion::merge(const Streams& s) { return ops::add(s.rgb, s.aux); }

TokenSequence TokenFusion::operator()(const TokenSequence& rgb, const TokenSequence& aux) const {
    return {out_norm_(merge(streams(rgb, aux))), rgb.rows, rgb.cols};
}

Cbam Cbam::create(ParamStore& store, const std::string& name, int64_t channels, int64_t reduction,
                  int64_t spatial_kernel, Rng& rng) {
    const int64_t hidden = std::max<int64_t>(1, channels / reduction);
    Cbam c;
    c.fc1 = Linear::create(store, name + ".channel.fc1", channels, hidden, false, rng);
    c.fc2 = Linear::create(store, name + ".channel.fc2", hidden, channels, false, rng);
    c.spatial = Conv2d::create(store, name + ".spatial", 2, 1, spatial_kernel, false, rng);
    return c;
}

Var Cbam::channel_gate(const FeatureMap& f) const { return pooled_gate(fc1, fc2, f); }

Var Cbam::spatial_gate(const FeatureMap& f) const {
    auto desc = ops::concat({ops::channel_mean(f), ops::channel_max(f)}, 1);
    return ops::sigmoid(spatial(desc));
}

FeatureMap Cbam::operator()(const FeatureMap& f) const {
    auto x = ops::mul(f, channel_gate(f));
    return ops::mul(x, spatial_gate(x));
}

FeatureFusion FeatureFusion::create(ParamStore& store, const std::string& name, const ModelConfig& config, Rng& rng) {
    const int64_t c = config.reduced_dim;
    FeatureFusion f;
    f.cbam = Cbam::create(store, name + ".cbam", c, config.cbam_reduction, config.spatial_kernel, rng);
    f.conv1 = Conv2d::create(store, name + ".conv1", c, c, 3, true, rng);
    f.conv2 = Conv2d::create(store, name + ".conv2", c, c, 3, true, rng);
    return f;
}

FeatureMap FeatureFusion::operator()(const FeatureMap& f_up, const FeatureMap& s_rgb, const FeatureMap& s_aux) const {
    require_same_map(f_up, s_rgb, "feature fusion");
    require_same_map(s_rgb, s_aux, "feature fusion");
    auto cross = ops::add(ops::mul(s_rgb, s_aux), ops::add(s_rgb, s_aux));
    auto x = cbam(ops::add(f_up, cross));
    return conv_relu(conv2, conv_relu(conv1, x));
}

DualConv DualConv::create(ParamStore& store, const std::string& name, int64_t channels, Rng& rng) {
    return {Conv2d::create(store, name + ".conv1", channels, channels, 3, true, rng),
            Conv2d::create(store, name + ".conv2", channels, channels, 3, true, rng)};
}

FeatureMap DualConv::operator()(const FeatureMap& f_up, const FeatureMap& s_rgb, const FeatureMap& s_aux) const {
    require_same_map(f_up, s_rgb, "dual conv");
    require_same_map(s_rgb, s_aux, "dual conv");
    return conv_relu(conv2, conv_relu(conv1, ops::add(f_up, ops::add(s_rgb, s_aux))));
}

MultiLevelFusion MultiLevelFusion::create(ParamStore& store, const std::string& name, const ModelConfig& config,
                                          Rng& rng) {
    const int64_t c = config.reduced_dim;
    const int64_t hidden = std::max<int64_t>(1, 3 * c / config.mffm_reduction);
    MultiLevelFusion m;
    for (int i = 0; i < 3; ++i) {
        m.level[static_cast<size_t>(i)] =
            Conv2d::create(store, name + ".level" + std::to_string(i + 1), c, c, 3, true, rng);
    }
    m.fc1 = Linear::create(store, name + ".channel.fc1", 3 * c, hidden, false, rng);
    m.fc2 = Linear::create(store, name + ".channel.fc2", hidden, 3 * c, false, rng);
    m.fuse = Conv2d::create(store, name + ".fuse", 3 * c, c, 1, true, rng);
    return m;
}

FeatureMap MultiLevelFusion::operator()(const FeatureMap& f1, const FeatureMap& f2, const FeatureMap& f3) const {
    const int64_t h = f3.dim(2), w = f3.dim(3);
    if (f1.dim(2) >= f2.dim(2) || f2.dim(2) >= h || f1.dim(1) != f3.dim(1) || f2.dim(1) != f3.dim(1) ||
        f1.dim(0) != f3.dim(0) || f2.dim(0) != f3.dim(0)) {
        throw ShapeError("multi-level fusion expects coarse-to-fine inputs, got " + shape_str(f1.shape()) + ", " +
                         shape_str(f2.shape()) + ", " + shape_str(f3.shape()));
    }
    auto a = conv_relu(level[0], ops::upsample_bilinear(f1, h, w));
    auto b = conv_relu(level[1], ops::upsample_bilinear(f2, h, w));
    auto c = conv_relu(level[2], f3);
    auto x = ops::concat({a, b, c}, 1);
    x = ops::mul(x, pooled_gate(fc1, fc2, x));
    return conv_relu(fuse, x);
}

PredictionHead PredictionHead::create(ParamStore& store, const std::string& name, int64_t channels, Rng& rng) {
    return {Conv2d::create(store, name + ".conv", channels, 1, 3, true, rng)};
}

Var PredictionHead::logits(const FeatureMap& f) const { return conv(f); }

Var saliency_from_logits(const Var& logits, int64_t out_size) {
    return ops::sigmoid(ops::upsample_bilinear(logits, out_size, out_size));
}

Var PredictionHead::operator()(const FeatureMap& f, int64_t out_size) const {
    return saliency_from_logits(logits(f), out_size);
}

}  // namespace omnisal::fusion
