#pragma once

#include <optional>
#include <string>
#include <vector>

#include "omnisal/tensor.hpp"

namespace omnisal::eval {

/// Prediction and ground truth of equal size, both in [0, 1]. Any shape whose
/// last two axes are (H, W) and whose leading axes are all 1 is accepted.
/// Threshold-based metrics binarize the GT at 0.5 (g >= 0.5 is foreground);
/// MAE uses the raw GT.
struct EvalPair {
    Tensor prediction;
    Tensor ground_truth;
};

inline constexpr double kBetaSquared = 0.3;
inline constexpr double kStructureGamma = 0.5;
inline constexpr int kThresholds = 256;

/// mean |P - G|.
double mae(const EvalPair& pair);
/// Max over t = k/255 (k = 0..255) of the F-measure of P > t with β² = 0.3.
/// An all-background GT scores 0.
double max_f_measure(const EvalPair& pair);
/// Structure measure: γ·object-aware + (1 - γ)·region-aware similarity.
double s_measure(const EvalPair& pair);
/// Max over the same thresholds of the enhanced-alignment measure.
double e_measure(const EvalPair& pair);

struct ImageScores {
    double mae = 0;
    double max_f = 0;
    double s_measure = 0;
    double e_measure = 0;
};

ImageScores evaluate_pair(const EvalPair& pair);

struct MetricsReport {
    std::string dataset;
    int64_t images = 0;
    std::optional<double> s_measure;
    std::optional<double> max_f;
    std::optional<double> e_measure;
    std::optional<double> mae;
};

/// Unweighted mean of the per-image scores; an empty list leaves every metric empty.
MetricsReport aggregate(const std::string& dataset, const std::vector<ImageScores>& scores);

}  // namespace omnisal::eval
