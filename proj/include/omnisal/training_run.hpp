#pragma once

#include <filesystem>
#include <functional>
#include <optional>

#include "omnisal/checkpoint.hpp"

namespace omnisal::train {

/// One line of the loss log: `step=<n> modality=<m> loss=<x> lr=<y>`, with
/// doubles in shortest round-trip form.
std::string format_log_line(const StepResult& r);

struct RunOptions {
    std::filesystem::path run_dir;
    bool resume = false;
    /// Stop after this many steps in this invocation (total_steps still caps).
    std::optional<int64_t> max_steps;
    std::function<void(const StepResult&)> on_step;
};

struct RunSummary {
    int64_t first_step = 0;
    int64_t last_step = 0;  // one past the final step taken
    double last_loss = 0.0;
    std::filesystem::path last_checkpoint;
};

/// Checkpoints live in `<run_dir>/checkpoints/step-<n>.ckpt`; returns the
/// highest step present.
std::optional<std::filesystem::path> latest_checkpoint(const std::filesystem::path& run_dir);

/// Joint training over every dataset in run.train_manifests. Appends to
/// `<run_dir>/train_log.txt`, checkpoints every train.checkpoint_every steps
/// and at the end. Resume restores weights, moments, step and sampler state
/// from the latest checkpoint and continues the same trajectory.
RunSummary run_training(const RunConfig& run, const RunOptions& options);

/// Per-step crop generator: a pure function of (seed, step), so resumed runs
/// draw the same crops without replaying earlier steps.
Rng crop_rng(uint64_t seed, int64_t step);

}  // namespace omnisal::train
