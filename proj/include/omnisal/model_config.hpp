#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace omnisal {

struct SoftSplitStage {
    int64_t kernel;
    int64_t stride;
    int64_t padding;

    bool operator==(const SoftSplitStage&) const = default;
};

enum class NormKind { layer, batch };

std::string to_string(NormKind kind);
NormKind parse_norm_kind(const std::string& text);

struct AblationFlags {
    bool use_tfm = true;
    bool use_ffm = true;
    bool use_mffm = true;

    bool operator==(const AblationFlags&) const = default;
};

/// Architecture hyperparameters. Every weight shape is a pure function of this
/// struct; `seed` fixes the initial values.
struct ModelConfig {
    int64_t input_size = 224;
    std::vector<SoftSplitStage> t2t_kernels{{7, 4, 2}, {3, 2, 1}, {3, 2, 1}};
    int64_t token_dim = 48;  // inner width of the two soft-split token transformers
    int64_t embed_dim = 256;
    int64_t depth = 10;
    int64_t heads = 4;
    double mlp_ratio = 2.0;
    int64_t reduced_dim = 64;

    int64_t tfm_depth = 5;
    int64_t tfm_heads = 1;
    double tfm_mlp_ratio = 5.0;

    int64_t cbam_reduction = 16;
    int64_t spatial_kernel = 7;
    int64_t mffm_reduction = 4;

    NormKind norm_kind = NormKind::layer;
    AblationFlags ablation{};
    uint64_t seed = 0;

    /// Side length of the square token grid emitted at each level (T1, T2, T3).
    std::vector<int64_t> stage_resolutions() const;
    /// Throws ConfigError naming the offending field.
    void validate() const;

    bool operator==(const ModelConfig&) const = default;

    static ModelConfig full();
    /// Laptop-CPU training preset used by the property and overfit tests.
    static ModelConfig desk();
    /// Minimal widths for finite-difference gradient checks.
    static ModelConfig tiny();
};

}  // namespace omnisal
