#pragma once

#include <filesystem>
#include <stdexcept>

#include "omnisal/config.hpp"
#include "omnisal/train.hpp"

namespace omnisal::train {

/// Checkpoint container, version 1:
///
///   bytes 0..7   magic "OSCKPT01"
///   bytes 8..15  header length N, little-endian uint64
///   next N bytes UTF-8 JSON header
///   remainder    raw little-endian float64 payload
///
/// Header keys: format_version, config_hash (FNV-1a of the model signature),
/// run_config (serialized RunConfig text), step, adam_steps, rng_state, and
/// tensors: [{name, group (param | adam_m | adam_v), shape, dtype "f64",
/// offset (in doubles)}].
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr int kCheckpointVersion = 1;

struct CheckpointMeta {
    int format_version = 0;
    std::string config_hash;
    RunConfig run_config;
    int64_t step = 0;
    std::string rng_state;
};

void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer, const RunConfig& run_config,
                     const std::string& rng_state = "");

/// Header only; cheap.
CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path);

/// Restores weights, Adam moments and step into `trainer`. Refuses a file
/// whose version or config hash differs from the trainer's model.
CheckpointMeta load_checkpoint(const std::filesystem::path& path, Trainer& trainer);

/// Loads weights only into `model` (same refusal rules).
CheckpointMeta load_weights(const std::filesystem::path& path, SaliencyModel& model);

}  // namespace omnisal::train
