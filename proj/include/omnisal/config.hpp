#pragma once

#include <map>
#include <string>
#include <vector>

#include "omnisal/data.hpp"
#include "omnisal/model_config.hpp"
#include "omnisal/train.hpp"

namespace omnisal {

/// Everything a command needs, serialized as `key = value` lines with dotted
/// keys (`model.embed_dim = 256`). A `preset = full|desk|tiny` line resets
/// the model and train sections before any other key is applied.
struct RunConfig {
    std::string preset = "full";
    ModelConfig model;
    train::TrainConfig train;
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> std{0.229, 0.224, 0.225};
    std::vector<std::string> train_manifests;
    std::vector<std::string> eval_manifests;
    int64_t eval_batch = 4;
    int64_t bench_batch = 1;
    int64_t bench_warmup = 2;
    int64_t bench_iters = 5;
    int64_t demo_rows = 8;
    int64_t demo_channels = 16;
    int64_t demo_trials = 16;

    static RunConfig from_preset(const std::string& name);

    /// Applies one key; throws ConfigError for unknown keys or bad values.
    void set(const std::string& key, const std::string& value);
    /// Ordered key/value pairs covering every field.
    std::vector<std::pair<std::string, std::string>> entries() const;
    std::string serialize() const;
    /// Parses serialized text (comments start with '#'); later keys win.
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::string& path);

    data::Preprocess preprocess() const;
    void validate() const;

    bool operator==(const RunConfig&) const = default;
};

/// Serialized architecture keys only (seed excluded): two configs with equal
/// text build weight sets of identical names and shapes.
std::string model_signature(const ModelConfig& config);
/// FNV-1a 64 of model_signature, as 16 hex digits.
std::string model_config_hash(const ModelConfig& config);

/// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace omnisal
