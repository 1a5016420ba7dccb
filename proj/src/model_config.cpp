#include "omnisal/model_config.hpp"

#include "omnisal/tensor.hpp"

namespace omnisal {

std::string to_string(NormKind kind) { return kind == NormKind::layer ? "layer" : "batch"; }

NormKind parse_norm_kind(const std::string& text) {
    if (text == "layer") return NormKind::layer;
    if (text == "batch") return NormKind::batch;
    throw ConfigError("norm kind must be 'layer' or 'batch', got '" + text + "'");
}

std::vector<int64_t> ModelConfig::stage_resolutions() const {
    std::vector<int64_t> out;
    int64_t side = input_size;
    for (size_t i = 0; i < t2t_kernels.size(); ++i) {
        const auto& s = t2t_kernels[i];
        if (s.kernel < 1 || s.stride < 1 || s.padding < 0 || side + 2 * s.padding < s.kernel) {
            throw ConfigError("soft-split stage " + std::to_string(i) + " (kernel " + std::to_string(s.kernel) +
                              ", stride " + std::to_string(s.stride) + ", padding " + std::to_string(s.padding) +
                              ") does not fit a " + std::to_string(side) + "x" + std::to_string(side) + " grid");
        }
        side = (side + 2 * s.padding - s.kernel) / s.stride + 1;
        out.push_back(side);
    }
    return out;
}

void ModelConfig::validate() const {
    if (input_size < 1) throw ConfigError("input_size must be positive");
    if (t2t_kernels.size() != 3) throw ConfigError("t2t_kernels must list exactly three soft-split stages");
    const auto res = stage_resolutions();
    for (size_t i = 1; i < res.size(); ++i) {
        if (res[i] >= res[i - 1]) {
            throw ConfigError("stage_resolutions must be strictly decreasing, stage " + std::to_string(i) + " gives " +
                              std::to_string(res[i]) + " after " + std::to_string(res[i - 1]));
        }
    }
    if (res.back() < 1) throw ConfigError("top-level token grid is empty");
    if (token_dim < 1) throw ConfigError("token_dim must be positive");
    if (embed_dim < 1) throw ConfigError("embed_dim must be positive");
    if (depth < 1) throw ConfigError("depth must be at least 1");
    if (heads < 1 || embed_dim % heads != 0) throw ConfigError("embed_dim must be divisible by heads");
    if (mlp_ratio <= 0.0 || tfm_mlp_ratio <= 0.0) throw ConfigError("mlp ratios must be positive");
    if (reduced_dim < 1) throw ConfigError("reduced_dim must be positive");
    if (tfm_depth < 1) throw ConfigError("tfm_depth must be at least 1");
    if (tfm_heads < 1 || reduced_dim % tfm_heads != 0) throw ConfigError("reduced_dim must be divisible by tfm_heads");
    if (cbam_reduction < 1 || mffm_reduction < 1) throw ConfigError("attention reductions must be positive");
    if (spatial_kernel < 1 || spatial_kernel % 2 == 0) throw ConfigError("spatial_kernel must be odd");
    if (static_cast<int64_t>(embed_dim * mlp_ratio) < 1 || static_cast<int64_t>(reduced_dim * tfm_mlp_ratio) < 1) {
        throw ConfigError("mlp hidden width rounds to zero");
    }
}

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
    ModelConfig c;
    c.input_size = 64;
    c.token_dim = 16;
    c.embed_dim = 32;
    c.depth = 2;
    c.heads = 2;
    c.reduced_dim = 16;
    c.tfm_depth = 1;
    c.tfm_mlp_ratio = 2.0;
    return c;
}

ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.input_size = 32;
    c.token_dim = 4;
    c.embed_dim = 8;
    c.depth = 1;
    c.heads = 2;
    c.reduced_dim = 8;
    c.tfm_depth = 1;
    c.tfm_heads = 2;
    c.tfm_mlp_ratio = 2.0;
    return c;
}

}  // namespace omnisal
