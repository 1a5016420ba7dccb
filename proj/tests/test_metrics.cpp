#include <cmath>

#include "doctest.h"
#include "omnisal/metrics.hpp"
#include "omnisal/rng.hpp"
#include "support/metric_oracles.hpp"

using namespace omnisal;
using namespace omnisal::eval;

namespace {

EvalPair pair_of(const oracle::Map& p, const oracle::Map& g) {
    return {Tensor({p.h, p.w}, p.v), Tensor({g.h, g.w}, g.v)};
}

oracle::Map random_map(Rng& rng, int h, int w, bool binary, double fg_rate = 0.4) {
    oracle::Map m{h, w, {}};
    for (int i = 0; i < h * w; ++i) m.v.push_back(binary ? (rng.uniform(0, 1) < fg_rate ? 1.0 : 0.0) : rng.uniform(0, 1));
    return m;
}

oracle::Map constant(int h, int w, double v) { return {h, w, std::vector<double>(static_cast<size_t>(h * w), v)}; }

}  // namespace

TEST_CASE("mae on a 2x2 example") {
    const oracle::Map p{2, 2, {0.0, 0.5, 1.0, 0.5}};
    const oracle::Map g{2, 2, {0.0, 0.0, 1.0, 1.0}};
    CHECK(mae(pair_of(p, g)) == 0.25);
    const oracle::Map p2{2, 2, {0.0, 0.0, 1.0, 0.5}};
    CHECK(mae(pair_of(p2, g)) == 0.125);
}

TEST_CASE("max F-measure realizes the closed-form value") {
    // 20 foreground pixels; 12 of them and 3 background pixels predicted:
    // precision 0.8, recall 0.6 at every threshold below 1.
    oracle::Map g = constant(8, 8, 0.0), p = constant(8, 8, 0.0);
    for (int i = 0; i < 20; ++i) g.v[static_cast<size_t>(i)] = 1.0;
    for (int i = 0; i < 12; ++i) p.v[static_cast<size_t>(i)] = 1.0;
    for (int i = 20; i < 23; ++i) p.v[static_cast<size_t>(i)] = 1.0;
    const double expected = 1.3 * 0.8 * 0.6 / (0.3 * 0.8 + 0.6);
    CHECK(std::abs(max_f_measure(pair_of(p, g)) - expected) < 1e-12);
    CHECK(std::abs(expected - 0.742857) < 1e-6);
}

TEST_CASE("perfect and inverted predictions") {
    Rng rng(3);
    const auto g = random_map(rng, 8, 8, true);
    const auto perfect = pair_of(g, g);
    CHECK(mae(perfect) == 0.0);
    CHECK(max_f_measure(perfect) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s_measure(perfect) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(e_measure(perfect) == doctest::Approx(1.0).epsilon(1e-12));

    oracle::Map inv = g;
    for (auto& v : inv.v) v = 1.0 - v;
    const auto inverted = pair_of(inv, g);
    CHECK(mae(inverted) == 1.0);
    CHECK(max_f_measure(inverted) == 0.0);
    CHECK(e_measure(inverted) == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("degenerate ground truths") {
    const auto zero = constant(8, 8, 0.0), one = constant(8, 8, 1.0), mid = constant(8, 8, 0.3);
    CHECK(s_measure(pair_of(zero, zero)) == 1.0);
    CHECK(e_measure(pair_of(zero, zero)) == 1.0);
    CHECK(max_f_measure(pair_of(mid, zero)) == 0.0);
    CHECK(s_measure(pair_of(mid, zero)) == doctest::Approx(0.7));
    CHECK(s_measure(pair_of(mid, one)) == doctest::Approx(0.3));
    CHECK(e_measure(pair_of(one, one)) == 1.0);
}

TEST_CASE("shape checks") {
    EvalPair bad{Tensor({4, 4}), Tensor({4, 5})};
    CHECK_THROWS_AS(mae(bad), ShapeError);
    EvalPair batch{Tensor({2, 4, 4}), Tensor({2, 4, 4})};
    CHECK_THROWS_AS(s_measure(batch), ShapeError);
    EvalPair nchw{Tensor({1, 1, 4, 4}, 0.2), Tensor({1, 1, 4, 4})};
    CHECK(mae(nchw) == doctest::Approx(0.2));
}

TEST_CASE("metrics match per-pixel references on random pairs") {
    Rng rng(11);
    int checked = 0;
    double worst_s = 0, worst_e = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const bool binary_p = trial % 5 == 0;
        const auto g = random_map(rng, 8, 8, true, 0.1 + 0.8 * rng.uniform(0, 1));
        auto p = random_map(rng, 8, 8, binary_p);
        // Exact threshold values exercise the strict comparison.
        if (trial % 7 == 0) p.v[0] = 128.0 / 255.0;
        const auto pr = pair_of(p, g);
        CHECK(mae(pr) == oracle::mae(p, g));
        const double fo = oracle::max_f(p, g);
        CHECK(std::abs(max_f_measure(pr) - fo) <= 1e-12);
        worst_s = std::max(worst_s, std::abs(s_measure(pr) - oracle::s_measure(p, g)));
        worst_e = std::max(worst_e, std::abs(e_measure(pr) - oracle::e_measure(p, g)));
        ++checked;
    }
    CHECK(checked == 1000);
    CHECK(worst_s <= 1e-6);
    CHECK(worst_e <= 1e-6);
}

TEST_CASE("non-square maps and edge centroids") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        auto g = constant(5, 9, 0.0);
        // Foreground hugging the right or bottom border puts the centroid on the edge.
        const int col = trial % 2 ? 8 : 0;
        for (int r = 0; r < 5; ++r) g.v[static_cast<size_t>(r * 9 + col)] = 1.0;
        const auto p = random_map(rng, 5, 9, false);
        const auto pr = pair_of(p, g);
        CHECK(std::abs(s_measure(pr) - oracle::s_measure(p, g)) <= 1e-6);
        CHECK(std::abs(e_measure(pr) - oracle::e_measure(p, g)) <= 1e-6);
    }
}

TEST_CASE("aggregation is an order-independent mean") {
    std::vector<ImageScores> s{{0.1, 0.9, 0.8, 0.7}, {0.3, 0.5, 0.6, 0.9}, {0.2, 0.7, 0.7, 0.8}};
    const auto a = aggregate("ds", s);
    std::reverse(s.begin(), s.end());
    const auto b = aggregate("ds", s);
    CHECK(a.images == 3);
    CHECK(*a.mae == doctest::Approx(0.2));
    CHECK(*a.max_f == doctest::Approx(0.7));
    CHECK(*a.s_measure == doctest::Approx(0.7));
    CHECK(*a.e_measure == doctest::Approx(0.8));
    CHECK(*a.mae == doctest::Approx(*b.mae).epsilon(1e-15));
    const auto empty = aggregate("none", {});
    CHECK(empty.images == 0);
    CHECK(!empty.mae);
    CHECK(!empty.s_measure);
}

TEST_CASE("shifting a binary prediction") {
    Rng rng(17);
    for (int trial = 0; trial < 100; ++trial) {
        const auto g = random_map(rng, 8, 8, true, 0.5);
        const auto p = random_map(rng, 8, 8, true, 0.5);
        const double base = max_f_measure(pair_of(p, g));
        // Raising the background level above 0 adds one binarization: everything on.
        const double all_on = max_f_measure(pair_of(constant(8, 8, 1.0), g));
        for (double shift : {-0.9, -0.3, 0.2, 0.7}) {
            oracle::Map q = p;
            for (auto& v : q.v) v = std::clamp(v + shift, 0.0, 1.0);
            CHECK(max_f_measure(pair_of(q, g)) == (shift < 0 ? base : std::max(base, all_on)));
        }
    }
}
