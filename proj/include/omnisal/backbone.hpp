#pragma once

#include <array>
#include <optional>
#include <utility>
#include <vector>

#include "omnisal/model_config.hpp"
#include "omnisal/params.hpp"

namespace omnisal::core {

/// (batch, rows·cols, channels) tokens laid out row-major over a rows×cols grid.
struct TokenSequence {
    Var values;
    int64_t rows = 0;
    int64_t cols = 0;

    int64_t batch() const { return values.dim(0); }
    int64_t length() const { return values.dim(1); }
    int64_t channels() const { return values.dim(2); }
    /// Throws ShapeError unless rows·cols equals the token count.
    void check() const;
};

/// Channel-last view of an image block (N, 3, H, W) as an H×W token grid.
TokenSequence image_to_tokens(const Var& images);

/// Tokens-to-token unfold for one soft-split stage. The output carries
/// kernel²·channels features per token, before any projection.
TokenSequence t2t_soft_split(const TokenSequence& tokens, const SoftSplitStage& stage, int stage_index);

struct AttentionResult {
    Tensor output;   // (Nq, dv)
    Tensor weights;  // (Nq, Nk), rows sum to 1
};

/// softmax(Q Kᵀ / √d_k) V on single-head 2-D operands.
AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, double d_k);

/// Multi-head attention of `queries` over `keys_values`; per-row only, rows never mix.
Var multi_head_attention(const Var& q, const Var& k, const Var& v, int64_t heads);

/// LayerNorm or batch-statistic norm behind one parameter pair.
struct NormLayer {
    LayerNorm affine;
    NormKind kind = NormKind::layer;

    static NormLayer create(ParamStore& store, const std::string& name, int64_t channels, NormKind kind);
    Var operator()(const Var& x) const;
};

struct BlockWeights {
    NormLayer norm1;
    Linear qkv;  // no bias
    Linear proj;
    NormLayer norm2;
    Linear fc1;
    Linear fc2;
    int64_t heads = 1;

    static BlockWeights create(ParamStore& store, const std::string& name, int64_t dim, int64_t heads,
                               double mlp_ratio, NormKind kind, Rng& rng);
};

/// Pre-norm residual block: x + MHA(LN(x)), then + MLP(LN(·)).
TokenSequence transformer_block(const TokenSequence& tokens, const BlockWeights& w);

/// Soft-split stage transformer that narrows the unfolded width to token_dim.
struct TokenTransformer {
    NormLayer norm1;
    Linear qkv;
    Linear proj;
    NormLayer norm2;
    Linear fc1;
    Linear fc2;
    int64_t dim = 0;

    static TokenTransformer create(ParamStore& store, const std::string& name, int64_t in_dim, int64_t dim,
                                   NormKind kind, Rng& rng);
    TokenSequence operator()(const TokenSequence& tokens) const;
};

/// T2T-style backbone: two soft-split token transformers, a projection to
/// embed_dim with fixed sinusoid positions, then `depth` transformer blocks.
class Backbone {
public:
    Backbone(const ModelConfig& config, ParamStore& store, Rng& rng);

    /// T1, T2, T3 at stage_resolutions; batch is preserved.
    std::array<TokenSequence, 3> forward(const TokenSequence& t0) const;

    int64_t level_channels(int level) const;
    const std::vector<BlockWeights>& blocks() const { return blocks_; }

private:
    ModelConfig config_;
    TokenTransformer stage1_;
    TokenTransformer stage2_;
    Linear project_;
    Tensor positions_;
    std::vector<BlockWeights> blocks_;
    NormLayer norm_;
};

TokenSequence reduce_channels(const TokenSequence& tokens, const Linear& proj);

/// Splits a paired batch in concatenation order: first half RGB, second half auxiliary.
std::pair<TokenSequence, TokenSequence> split_batch(const TokenSequence& tokens);

// ---- normalization-interference laboratory (no grad, plain tensors) ----

struct RunningStats {
    std::vector<double> mean;
    std::vector<double> var;
};

/// Per-row normalization over the last axis, then `scale`·x̂ + `offset`.
Tensor layernorm_apply(const Tensor& x, double scale = 1.0, double offset = 0.0, double eps = 1e-5);

/// Channel-last batch normalization. Without running stats the statistics pool
/// every leading axis; a batch of one logs a degenerate-statistics warning.
Tensor batchnorm_apply(const Tensor& x, const std::optional<RunningStats>& running = std::nullopt,
                       double scale = 1.0, double offset = 0.0, double eps = 1e-5);

/// Max |Δ| over the RGB rows of norm([rgb; aux_a]) vs norm([rgb; aux_b]).
double interference_metric(NormKind kind, const Tensor& rgb, const Tensor& aux_a, const Tensor& aux_b);

}  // namespace omnisal::core
