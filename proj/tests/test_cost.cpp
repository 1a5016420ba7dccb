#include <cmath>

#include "doctest.h"
#include "omnisal/cost.hpp"
#include "omnisal/ops.hpp"

using namespace omnisal;
using namespace omnisal::eval;

TEST_CASE("a single 3x3 conv counts k*k*Cin*Cout per output pixel") {
    Rng rng(1);
    ParamStore store;
    auto conv = Conv2d::create(store, "c", 64, 64, 3, true, rng);
    NoGradGuard guard;
    const auto before = mac_counter().layer;
    conv(Var(Tensor({1, 64, 56, 56})));
    CHECK(mac_counter().layer - before == 3LL * 3 * 64 * 64 * 56 * 56);
}

TEST_CASE("analytic MACs equal instrumented MACs") {
    for (int flags = 0; flags < 8; ++flags) {
        ModelConfig c = ModelConfig::tiny();
        c.ablation = {(flags & 1) != 0, (flags & 2) != 0, (flags & 4) != 0};
        c.heads = 1 + flags % 2;
        const SaliencyModel model(c);
        for (Modality m : {Modality::rgb, Modality::rgbd, Modality::rgbt}) {
            CAPTURE(flags);
            const auto analytic = count_flops(c, m);
            const auto measured = measure_macs(model, m);
            CHECK(analytic.layer == measured.layer);
            CHECK(analytic.attention == measured.attention);
        }
    }
}

TEST_CASE("default configuration cost") {
    const ModelConfig c;
    const auto rgb = count_flops(c, Modality::rgb);
    const auto paired = count_flops(c, Modality::rgbd);
    CHECK(rgb.layer < paired.layer);
    CHECK(std::abs(rgb.gflops() / 2.0 - 1.0) < 0.05);
    CHECK(std::abs(paired.gflops() / 3.1 - 1.0) < 0.05);
}

TEST_CASE("parameter breakdown sums to the store total") {
    ModelConfig c = ModelConfig::tiny();
    const SaliencyModel model(c);
    const auto parts = count_params(model);
    int64_t sum = 0;
    for (const auto& [name, n] : parts) sum += n;
    CHECK(sum == model.params().count());
    CHECK(parts.size() == 8);
    CHECK(parts.front().first == "backbone");

    c.ablation = {false, true, false};
    const SaliencyModel reduced(c);
    const auto rp = count_params(reduced);
    CHECK(rp.size() == 6);  // no tfm, no mffm
}

TEST_CASE("fps measurement") {
    const SaliencyModel model(ModelConfig::tiny());
    CHECK_THROWS_AS(measure_fps(model, Modality::rgb, 1, 1, 0), std::invalid_argument);
    CHECK(measure_fps(model, Modality::rgb, 1, 1, 1) > 0.0);
    const auto report = cost_report(model, true, 1, 1, 1);
    CHECK(report.fps_batch == 1);
    const auto json = cost_json(report);
    CHECK(json.find("\"flops_rgb_lt_paired\": true") != std::string::npos);
    CHECK(json.find("\"fps_rgb\"") != std::string::npos);
}

TEST_CASE("benchmark table and csv") {
    std::vector<MetricsReport> rows{{"NJU2K", 3, 0.91, 0.9, 0.95, 0.031},
                                    {"empty", 0, std::nullopt, std::nullopt, std::nullopt, std::nullopt}};
    const auto table = benchmark_table(rows);
    CHECK(table.find("Sm↑") != std::string::npos);
    CHECK(table.find("MAE↓") != std::string::npos);
    CHECK(table.find("0.0310") != std::string::npos);
    CHECK(table.find("—") != std::string::npos);
    const auto csv = benchmark_csv(rows);
    const auto back = parse_benchmark_csv(csv);
    REQUIRE(back.size() == 2);
    CHECK(back[0].dataset == "NJU2K");
    CHECK(*back[0].mae == 0.031);
    CHECK(*back[0].s_measure == 0.91);
    CHECK(!back[1].e_measure);
    CHECK(benchmark_csv(back) == csv);
}
