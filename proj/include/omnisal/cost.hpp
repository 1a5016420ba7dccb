#pragma once

#include <map>
#include <string>
#include <vector>

#include "omnisal/metrics.hpp"
#include "omnisal/model.hpp"

namespace omnisal::eval {

/// Multiply-accumulate counts for one logical sample (one RGB image plus its
/// auxiliary image). `layer` covers linear and convolution layers (bias adds,
/// norms, activations, pooling and resizes are not counted); `attention`
/// covers the Q·Kᵀ and A·V products.
struct MacCount {
    int64_t layer = 0;
    int64_t attention = 0;

    /// Primary reported FLOPs figure: layer MACs, the convention common
    /// profilers report and the published cost tables use.
    double gflops() const { return static_cast<double>(layer) * 1e-9; }
    /// 2 FLOPs per MAC with attention products included.
    double gflops_full() const { return 2.0 * static_cast<double>(layer + attention) * 1e-9; }
};

/// Closed-form count over the configured architecture. RGB uses the fast
/// path (one backbone pass); paired modalities run the backbone twice.
MacCount count_flops(const ModelConfig& config, Modality modality);

/// Same quantity measured by running one forward pass with the op counters on.
MacCount measure_macs(const SaliencyModel& model, Modality modality);

struct CostReport {
    int64_t total_params = 0;
    std::vector<std::pair<std::string, int64_t>> params;  // per submodule, construction order
    MacCount rgb;
    MacCount paired;
    double fps_rgb = 0.0;
    double fps_paired = 0.0;
    int64_t fps_batch = 0;
};

/// Exact scalar count per submodule (backbone, reduce, tfm, decoder stages,
/// mffm, head); only submodules present in the model are listed.
std::vector<std::pair<std::string, int64_t>> count_params(const SaliencyModel& model);

/// Images per second over `iters` timed forward passes after `warmup` untimed ones.
double measure_fps(const SaliencyModel& model, Modality modality, int64_t batch, int64_t warmup, int64_t iters);

CostReport cost_report(const SaliencyModel& model, bool with_fps, int64_t batch = 1, int64_t warmup = 1,
                       int64_t iters = 3);

/// JSON document; keys are listed in the README.
std::string cost_json(const CostReport& cost);
std::string cost_text(const CostReport& cost);

/// Aligned text table with Sm↑ Fβmax↑ Eφmax↑ MAE↓ columns, one row per dataset.
std::string benchmark_table(const std::vector<MetricsReport>& reports);
/// `dataset,images,s_measure,max_f,e_measure,mae`; empty metrics are empty fields.
std::string benchmark_csv(const std::vector<MetricsReport>& reports);
std::vector<MetricsReport> parse_benchmark_csv(const std::string& text);

}  // namespace omnisal::eval
