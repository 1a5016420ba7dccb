#pragma once

#include <memory>
#include <optional>
#include <variant>

#include "omnisal/fusion.hpp"
#include "omnisal/modality.hpp"

namespace omnisal {

/// How an RGB batch is routed through the backbone.
enum class Route {
    automatic,  // RGB batches take the fast path, paired modalities the full path
    paired,     // always run the backbone over all 2B rows
};

struct ForwardOutputs {
    Var saliency;  // (B, 1, input_size, input_size), values in (0, 1)
    /// Reduced tokens per level for each half of the batch.
    std::array<core::TokenSequence, 3> rgb_levels;
    std::array<core::TokenSequence, 3> aux_levels;
    core::TokenSequence fused_top;
    /// Decoder outputs, coarse to fine (14², 28², 56² at default size).
    std::array<fusion::FeatureMap, 3> decoder;
    fusion::FeatureMap final_features;
};

/// The whole network: shared backbone, channel reduction, token fusion,
/// decoder cascade, multi-level fusion and prediction head. One weight set
/// serves every modality.
class SaliencyModel {
public:
    explicit SaliencyModel(const ModelConfig& config);

    const ModelConfig& config() const noexcept { return config_; }
    ParamStore& params() noexcept { return store_; }
    const ParamStore& params() const noexcept { return store_; }
    const core::Backbone& backbone() const noexcept { return backbone_; }
    const fusion::TokenFusion* token_fusion() const noexcept { return tfm_ ? &*tfm_ : nullptr; }

    /// `images` is a paired batch (2B, 3, S, S): B RGB rows then B aux rows.
    /// RGB batches must carry aux rows equal to their RGB rows.
    ForwardOutputs forward(const Var& images, Modality modality, Route route = Route::automatic) const;
    Var predict(const Var& images, Modality modality) const { return forward(images, modality).saliency; }

    /// Parameter-name prefixes of each reportable submodule, in construction order.
    static std::vector<std::string> submodules();

private:
    using Stage = std::variant<fusion::FeatureFusion, fusion::DualConv>;

    fusion::FeatureMap decode_stage(const Stage& stage, const fusion::FeatureMap& f_up,
                                    const fusion::FeatureMap& s_rgb, const fusion::FeatureMap& s_aux) const;

    ModelConfig config_;
    ParamStore store_;
    Rng init_rng_;  // declared before the submodules: construction draws from it in order
    core::Backbone backbone_;
    std::array<Linear, 3> reduce_;
    std::optional<fusion::TokenFusion> tfm_;
    std::vector<Stage> stages_;  // coarse to fine
    std::optional<fusion::MultiLevelFusion> mffm_;
    fusion::PredictionHead head_;
};

}  // namespace omnisal
