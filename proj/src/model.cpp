#include "omnisal/model.hpp"

#include <algorithm>

#include "omnisal/ops.hpp"

namespace omnisal {

using core::TokenSequence;
using fusion::FeatureMap;

namespace {

bool halves_equal(const Tensor& images) {
    const int64_t half = images.numel() / 2;
    const auto v = images.values();
    return std::equal(v.begin(), v.begin() + half, v.begin() + half);
}

}  // namespace

std::vector<std::string> SaliencyModel::submodules() {
    return {"backbone.", "reduce.", "tfm.", "decoder.stage1.", "decoder.stage2.", "decoder.stage3.", "mffm.", "head."};
}

SaliencyModel::SaliencyModel(const ModelConfig& config)
    : config_((config.validate(), config)),
      init_rng_(config_.seed),
      backbone_(config_, store_, init_rng_) {
    Rng& rng = init_rng_;
    for (int i = 0; i < 3; ++i) {
        reduce_[static_cast<size_t>(i)] = Linear::create(store_, "reduce." + std::to_string(i + 1),
                                                         backbone_.level_channels(i), config_.reduced_dim, true, rng);
    }
    if (config_.ablation.use_tfm) tfm_.emplace(config_, store_, rng);
    for (int i = 0; i < 3; ++i) {
        const std::string name = "decoder.stage" + std::to_string(i + 1);
        if (config_.ablation.use_ffm) {
            stages_.emplace_back(fusion::FeatureFusion::create(store_, name, config_, rng));
        } else {
            stages_.emplace_back(fusion::DualConv::create(store_, name, config_.reduced_dim, rng));
        }
    }
    if (config_.ablation.use_mffm) mffm_ = fusion::MultiLevelFusion::create(store_, "mffm", config_, rng);
    head_ = fusion::PredictionHead::create(store_, "head", config_.reduced_dim, rng);
}

FeatureMap SaliencyModel::decode_stage(const Stage& stage, const FeatureMap& f_up, const FeatureMap& s_rgb,
                                       const FeatureMap& s_aux) const {
    return std::visit([&](const auto& s) { return s(f_up, s_rgb, s_aux); }, stage);
}

ForwardOutputs SaliencyModel::forward(const Var& images, Modality modality, Route route) const {
    const int64_t s = config_.input_size;
    if (images.shape().size() != 4 || images.dim(1) != 3 || images.dim(2) != s || images.dim(3) != s) {
        throw ShapeError("model input must be (2B, 3, " + std::to_string(s) + ", " + std::to_string(s) + "), got " +
                         shape_str(images.shape()));
    }
    if (images.dim(0) % 2 != 0 || images.dim(0) == 0) {
        throw ContractError("paired batch needs an even, non-zero row count, got " + std::to_string(images.dim(0)));
    }
    const int64_t b = images.dim(0) / 2;
    const bool fast = modality == Modality::rgb && route == Route::automatic;
    if (modality == Modality::rgb && !halves_equal(images.value())) {
        throw ContractError("rgb batch: auxiliary rows must duplicate the RGB rows");
    }

    ForwardOutputs out;
    if (fast) {
        auto levels = backbone_.forward(core::image_to_tokens(ops::narrow(images, 0, 0, b)));
        for (size_t i = 0; i < 3; ++i) {
            out.rgb_levels[i] = core::reduce_channels(levels[i], reduce_[i]);
            out.aux_levels[i] = out.rgb_levels[i];
        }
    } else {
        auto levels = backbone_.forward(core::image_to_tokens(images));
        for (size_t i = 0; i < 3; ++i) {
            std::tie(out.rgb_levels[i], out.aux_levels[i]) =
                core::split_batch(core::reduce_channels(levels[i], reduce_[i]));
        }
    }

    const auto& top_rgb = out.rgb_levels[2];
    const auto& top_aux = out.aux_levels[2];
    out.fused_top = tfm_ ? (*tfm_)(top_rgb, top_aux)
                         : TokenSequence{ops::add(top_rgb.values, top_aux.values), top_rgb.rows, top_rgb.cols};

    FeatureMap f = fusion::tokens_to_map(out.fused_top);
    for (size_t i = 0; i < 3; ++i) {
        const size_t level = 2 - i;
        const auto s_rgb = fusion::tokens_to_map(out.rgb_levels[level]);
        const auto s_aux = fusion::tokens_to_map(out.aux_levels[level]);
        const FeatureMap f_up = i == 0 ? f : ops::upsample_bilinear(f, s_rgb.dim(2), s_rgb.dim(3));
        f = decode_stage(stages_[i], f_up, s_rgb, s_aux);
        out.decoder[i] = f;
    }
    out.final_features = mffm_ ? (*mffm_)(out.decoder[0], out.decoder[1], out.decoder[2]) : out.decoder[2];
    out.saliency = head_(out.final_features, s);
    return out;
}

}  // namespace omnisal
