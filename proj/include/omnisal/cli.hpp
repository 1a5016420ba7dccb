#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace omnisal::cli {

/// Default output root when `--out` is absent.
inline constexpr const char* kOutputEnv = "OMNISAL_OUT";

enum ExitCode : int {
    kOk = 0,
    kFailure = 1,     // runtime failure (unreadable image, I/O error)
    kBadInput = 2,    // usage, config, missing manifest, checkpoint mismatch
    kNonFinite = 3,   // training diverged
};

/// Runs one command. `args` excludes the program name, e.g.
/// {"train", "--config", "desk.cfg", "--set", "train.total_steps=50"}.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace omnisal::cli
