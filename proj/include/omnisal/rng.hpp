#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace omnisal {

/// Seeded generator whose draws are identical on every platform: only the raw
/// 64-bit engine output is used, distributions are computed here.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n).
    uint64_t below(uint64_t n);
    double normal();
    /// Normal(0, std) resampled until it lands within ±2·std.
    double truncated_normal(double std);

    std::string state() const;
    void restore(const std::string& state);

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace omnisal
