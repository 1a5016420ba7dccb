#include "omnisal/backbone.hpp"

#include <cmath>

#include "omnisal/log.hpp"
#include "omnisal/ops.hpp"

namespace omnisal::core {

void TokenSequence::check() const {
    if (values.shape().size() != 3) throw ShapeError("token sequence must be rank 3, got " + shape_str(values.shape()));
    if (rows * cols != values.dim(1)) {
        throw ShapeError("token grid " + std::to_string(rows) + "x" + std::to_string(cols) + " does not match length " +
                         std::to_string(values.dim(1)));
    }
}

TokenSequence image_to_tokens(const Var& images) {
    if (images.shape().size() != 4) throw ShapeError("image block must be (N, C, H, W), got " + shape_str(images.shape()));
    const int64_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
    auto chw = ops::reshape(images, {n, c, h * w});
    return {ops::permute(chw, {0, 2, 1}), h, w};
}

TokenSequence t2t_soft_split(const TokenSequence& tokens, const SoftSplitStage& stage, int stage_index) {
    tokens.check();
    const auto fits = [&](int64_t side) { return side + 2 * stage.padding >= stage.kernel; };
    if (stage.kernel < 1 || stage.stride < 1 || stage.padding < 0 || !fits(tokens.rows) || !fits(tokens.cols)) {
        throw ConfigError("soft-split stage " + std::to_string(stage_index) + ": kernel " +
                          std::to_string(stage.kernel) + "/stride " + std::to_string(stage.stride) + "/padding " +
                          std::to_string(stage.padding) + " incompatible with a " + std::to_string(tokens.rows) +
                          "x" + std::to_string(tokens.cols) + " grid");
    }
    const int64_t rows = (tokens.rows + 2 * stage.padding - stage.kernel) / stage.stride + 1;
    const int64_t cols = (tokens.cols + 2 * stage.padding - stage.kernel) / stage.stride + 1;
    auto out = ops::soft_split(tokens.values, tokens.rows, tokens.cols, stage.kernel, stage.stride, stage.padding);
    return {out, rows, cols};
}

AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, double d_k) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) throw ShapeError("scaled_dot_attention expects 2-D operands");
    if (q.dim(1) != k.dim(1)) throw ShapeError("scaled_dot_attention: Q and K key dimensions differ");
    if (k.dim(0) != v.dim(0)) throw ShapeError("scaled_dot_attention: K and V token counts differ");
    if (!q.all_finite() || !k.all_finite() || !v.all_finite() || !std::isfinite(d_k) || d_k <= 0.0) {
        throw std::domain_error("scaled_dot_attention: non-finite input");
    }
    const int64_t nq = q.dim(0), nk = k.dim(0), dk = q.dim(1), dv = v.dim(1);
    AttentionResult r{Tensor({nq, dv}), Tensor({nq, nk})};
    const double s = 1.0 / std::sqrt(d_k);
    for (int64_t i = 0; i < nq; ++i) {
        double m = -INFINITY;
        for (int64_t j = 0; j < nk; ++j) {
            double dot = 0.0;
            for (int64_t t = 0; t < dk; ++t) dot += q[i * dk + t] * k[j * dk + t];
            r.weights[i * nk + j] = dot * s;
            m = std::max(m, dot * s);
        }
        double z = 0.0;
        for (int64_t j = 0; j < nk; ++j) z += (r.weights[i * nk + j] = std::exp(r.weights[i * nk + j] - m));
        for (int64_t j = 0; j < nk; ++j) r.weights[i * nk + j] /= z;
        for (int64_t j = 0; j < nk; ++j)
            for (int64_t t = 0; t < dv; ++t) r.output[i * dv + t] += r.weights[i * nk + j] * v[j * dv + t];
    }
    return r;
}

namespace {

Var split_heads(const Var& x, int64_t heads) {
    const int64_t n = x.dim(0), l = x.dim(1), e = x.dim(2);
    if (heads == 1) return x;
    auto t = ops::reshape(x, {n, l, heads, e / heads});
    return ops::reshape(ops::permute(t, {0, 2, 1, 3}), {n * heads, l, e / heads});
}

Var merge_heads(const Var& x, int64_t batch, int64_t heads) {
    if (heads == 1) return x;
    const int64_t l = x.dim(1), d = x.dim(2);
    auto t = ops::reshape(x, {batch, heads, l, d});
    return ops::reshape(ops::permute(t, {0, 2, 1, 3}), {batch, l, heads * d});
}

Tensor sinusoid_table(int64_t positions, int64_t dim) {
    Tensor t({1, positions, dim});
    for (int64_t p = 0; p < positions; ++p)
        for (int64_t j = 0; j < dim; ++j) {
            const double angle =
                static_cast<double>(p) / std::pow(10000.0, 2.0 * static_cast<double>(j / 2) / static_cast<double>(dim));
            t[p * dim + j] = (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
        }
    return t;
}

Var mlp(const Linear& fc1, const Linear& fc2, const Var& x) { return fc2(ops::gelu(fc1(x))); }

}  // namespace

Var multi_head_attention(const Var& q, const Var& k, const Var& v, int64_t heads) {
    const int64_t e = q.dim(2);
    if (heads < 1 || e % heads != 0) {
        throw ConfigError("attention width " + std::to_string(e) + " not divisible by " + std::to_string(heads) +
                          " heads");
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(e / heads));
    auto out = ops::attention(split_heads(q, heads), split_heads(k, heads), split_heads(v, heads), scale);
    return merge_heads(out, q.dim(0), heads);
}

NormLayer NormLayer::create(ParamStore& store, const std::string& name, int64_t channels, NormKind kind) {
    return {LayerNorm::create(store, name, channels), kind};
}

Var NormLayer::operator()(const Var& x) const {
    if (kind == NormKind::layer) return affine(x);
    return ops::batch_norm(x, affine.gamma, affine.beta);
}

BlockWeights BlockWeights::create(ParamStore& store, const std::string& name, int64_t dim, int64_t heads,
                                  double mlp_ratio, NormKind kind, Rng& rng) {
    const auto hidden = static_cast<int64_t>(static_cast<double>(dim) * mlp_ratio);
    BlockWeights b;
    b.norm1 = NormLayer::create(store, name + ".norm1", dim, kind);
    b.qkv = Linear::create(store, name + ".attn.qkv", dim, 3 * dim, false, rng);
    b.proj = Linear::create(store, name + ".attn.proj", dim, dim, true, rng);
    b.norm2 = NormLayer::create(store, name + ".norm2", dim, kind);
    b.fc1 = Linear::create(store, name + ".mlp.fc1", dim, hidden, true, rng);
    b.fc2 = Linear::create(store, name + ".mlp.fc2", hidden, dim, true, rng);
    b.heads = heads;
    return b;
}

TokenSequence transformer_block(const TokenSequence& tokens, const BlockWeights& w) {
    tokens.check();
    const int64_t e = tokens.channels();
    if (w.qkv.weight.dim(1) != e) {
        throw ShapeError("transformer_block: tokens have " + std::to_string(e) + " channels, block expects " +
                         std::to_string(w.qkv.weight.dim(1)));
    }
    if (e % w.heads != 0) throw ConfigError("transformer_block: channels not divisible by head count");
    auto qkv = w.qkv(w.norm1(tokens.values));
    auto attn = multi_head_attention(ops::narrow(qkv, 2, 0, e), ops::narrow(qkv, 2, e, e),
                                     ops::narrow(qkv, 2, 2 * e, e), w.heads);
    auto x = ops::add(tokens.values, w.proj(attn));
    x = ops::add(x, mlp(w.fc1, w.fc2, w.norm2(x)));
    return {x, tokens.rows, tokens.cols};
}

TokenTransformer TokenTransformer::create(ParamStore& store, const std::string& name, int64_t in_dim, int64_t dim,
                                          NormKind kind, Rng& rng) {
    TokenTransformer t;
    t.norm1 = NormLayer::create(store, name + ".norm1", in_dim, kind);
    t.qkv = Linear::create(store, name + ".attn.qkv", in_dim, 3 * dim, false, rng);
    t.proj = Linear::create(store, name + ".attn.proj", dim, dim, true, rng);
    t.norm2 = NormLayer::create(store, name + ".norm2", dim, kind);
    t.fc1 = Linear::create(store, name + ".mlp.fc1", dim, dim, true, rng);
    t.fc2 = Linear::create(store, name + ".mlp.fc2", dim, dim, true, rng);
    t.dim = dim;
    return t;
}

TokenSequence TokenTransformer::operator()(const TokenSequence& tokens) const {
    auto qkv = this->qkv(norm1(tokens.values));
    auto v = ops::narrow(qkv, 2, 2 * dim, dim);
    auto attn = multi_head_attention(ops::narrow(qkv, 2, 0, dim), ops::narrow(qkv, 2, dim, dim), v, 1);
    // The unfolded width differs from dim, so the residual runs through the values.
    auto x = ops::add(v, proj(attn));
    x = ops::add(x, mlp(fc1, fc2, norm2(x)));
    return {x, tokens.rows, tokens.cols};
}

Backbone::Backbone(const ModelConfig& config, ParamStore& store, Rng& rng) : config_(config) {
    config_.validate();
    const auto& k = config_.t2t_kernels;
    const auto kind = config_.norm_kind;
    const int64_t td = config_.token_dim;
    stage1_ = TokenTransformer::create(store, "backbone.t2t.attention1", 3 * k[0].kernel * k[0].kernel, td, kind, rng);
    stage2_ = TokenTransformer::create(store, "backbone.t2t.attention2", td * k[1].kernel * k[1].kernel, td, kind, rng);
    project_ = Linear::create(store, "backbone.t2t.project", td * k[2].kernel * k[2].kernel, config_.embed_dim, true, rng);
    const int64_t top = config_.stage_resolutions()[2];
    positions_ = sinusoid_table(top * top, config_.embed_dim);
    for (int64_t i = 0; i < config_.depth; ++i) {
        blocks_.push_back(BlockWeights::create(store, "backbone.blocks." + std::to_string(i), config_.embed_dim,
                                               config_.heads, config_.mlp_ratio, kind, rng));
    }
    norm_ = NormLayer::create(store, "backbone.norm", config_.embed_dim, kind);
}

int64_t Backbone::level_channels(int level) const { return level < 2 ? config_.token_dim : config_.embed_dim; }

std::array<TokenSequence, 3> Backbone::forward(const TokenSequence& t0) const {
    t0.check();
    if (t0.channels() != 3 || t0.rows != config_.input_size || t0.cols != config_.input_size) {
        throw ShapeError("backbone expects a " + std::to_string(config_.input_size) + "x" +
                         std::to_string(config_.input_size) + " three-channel grid, got " +
                         std::to_string(t0.rows) + "x" + std::to_string(t0.cols) + "x" +
                         std::to_string(t0.channels()));
    }
    const auto& k = config_.t2t_kernels;
    auto t1 = stage1_(t2t_soft_split(t0, k[0], 0));
    auto t2 = stage2_(t2t_soft_split(t1, k[1], 1));
    auto s3 = t2t_soft_split(t2, k[2], 2);
    TokenSequence x{ops::add(project_(s3.values), Var(positions_)), s3.rows, s3.cols};
    for (const auto& b : blocks_) x = transformer_block(x, b);
    x.values = norm_(x.values);
    return {t1, t2, x};
}

TokenSequence reduce_channels(const TokenSequence& tokens, const Linear& proj) {
    tokens.check();
    if (proj.weight.dim(1) != tokens.channels()) {
        throw ShapeError("reduce_channels: tokens have " + std::to_string(tokens.channels()) +
                         " channels, projection expects " + std::to_string(proj.weight.dim(1)));
    }
    return {proj(tokens.values), tokens.rows, tokens.cols};
}

std::pair<TokenSequence, TokenSequence> split_batch(const TokenSequence& tokens) {
    tokens.check();
    const int64_t n = tokens.batch();
    if (n % 2 != 0) {
        throw ContractError("split_batch: paired batch must have an even size, got " + std::to_string(n));
    }
    return {TokenSequence{ops::narrow(tokens.values, 0, 0, n / 2), tokens.rows, tokens.cols},
            TokenSequence{ops::narrow(tokens.values, 0, n / 2, n / 2), tokens.rows, tokens.cols}};
}

Tensor layernorm_apply(const Tensor& x, double scale, double offset, double eps) {
    if (x.rank() < 1) throw ShapeError("layernorm_apply: scalar input");
    NoGradGuard no_grad;
    const int64_t c = x.shape().back();
    return ops::layer_norm(Var(x), Var(Tensor({c}, scale)), Var(Tensor({c}, offset)), eps).value();
}

Tensor batchnorm_apply(const Tensor& x, const std::optional<RunningStats>& running, double scale, double offset,
                       double eps) {
    if (x.rank() < 1) throw ShapeError("batchnorm_apply: scalar input");
    const int64_t c = x.shape().back();
    if (running) {
        if (static_cast<int64_t>(running->mean.size()) != c || static_cast<int64_t>(running->var.size()) != c) {
            throw ShapeError("batchnorm_apply: running stats have the wrong channel count");
        }
        Tensor out(x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) {
            const auto j = static_cast<size_t>(i % c);
            out[i] = (x[i] - running->mean[j]) / std::sqrt(running->var[j] + eps) * scale + offset;
        }
        return out;
    }
    if (x.dim(0) == 1) log::warn("batchnorm_apply: batch size 1 in training mode gives degenerate statistics");
    NoGradGuard no_grad;
    return ops::batch_norm(Var(x), Var(Tensor({c}, scale)), Var(Tensor({c}, offset)), eps).value();
}

double interference_metric(NormKind kind, const Tensor& rgb, const Tensor& aux_a, const Tensor& aux_b) {
    if (aux_a.shape() != aux_b.shape()) {
        throw ShapeError("interference_metric: aux candidates differ in shape " + shape_str(aux_a.shape()) + " vs " +
                         shape_str(aux_b.shape()));
    }
    if (rgb.rank() < 1 || rgb.rank() != aux_a.rank()) throw ShapeError("interference_metric: rank mismatch");
    for (int64_t i = 1; i < rgb.rank(); ++i) {
        if (rgb.dim(i) != aux_a.dim(i)) throw ShapeError("interference_metric: rgb/aux feature shapes differ");
    }
    NoGradGuard no_grad;
    auto normalize = [&](const Tensor& aux) {
        auto batch = ops::concat({Var(rgb), Var(aux)}, 0).value();
        auto out = kind == NormKind::layer ? layernorm_apply(batch) : batchnorm_apply(batch);
        return ops::narrow(Var(out), 0, 0, rgb.dim(0)).value();
    };
    return max_abs_diff(normalize(aux_a), normalize(aux_b));
}

}  // namespace omnisal::core
