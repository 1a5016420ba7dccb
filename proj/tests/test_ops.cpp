#include <cmath>

#include "doctest.h"
#include "omnisal/ops.hpp"
#include "support/check.hpp"

using namespace omnisal;
using omnisal::testing::gradcheck;
using omnisal::testing::random_tensor;

namespace {

// sum(y ⊙ R) for a fixed random R, so every output element matters.
Var weighted_sum(const Var& y, Rng& rng) {
    Rng local(rng.next_u64());
    return ops::sum(ops::mul(y, Var(random_tensor(y.shape(), local))));
}

void expect_grad_ok(const std::function<Var(const std::vector<Var>&)>& f, const std::vector<Shape>& shapes,
                    uint64_t seed = 1, double lo = -1.0, double hi = 1.0) {
    Rng rng(seed);
    std::vector<Var> inputs;
    for (const auto& s : shapes) inputs.emplace_back(random_tensor(s, rng, lo, hi), true);
    const uint64_t weight_seed = rng.next_u64();
    auto build = [&] {
        Rng w(weight_seed);
        return weighted_sum(f(inputs), w);
    };
    auto r = gradcheck(build, inputs, rng);
    CHECK(r.checked > 0);
    CHECK(r.max_rel_error < 1e-6);
}

}  // namespace

TEST_CASE("elementwise ops broadcast and differentiate") {
    expect_grad_ok([](auto& v) { return ops::add(v[0], v[1]); }, {{2, 3, 4}, {1, 3, 1}});
    expect_grad_ok([](auto& v) { return ops::sub(v[0], v[1]); }, {{2, 3}, {2, 1}});
    expect_grad_ok([](auto& v) { return ops::mul(v[0], v[1]); }, {{2, 3, 4}, {2, 1, 4}});
    expect_grad_ok([](auto& v) { return ops::scale(v[0], -2.5); }, {{5}});
    expect_grad_ok([](auto& v) { return ops::gelu(v[0]); }, {{3, 4}});
    expect_grad_ok([](auto& v) { return ops::sigmoid(v[0]); }, {{3, 4}});
    expect_grad_ok([](auto& v) { return ops::relu(v[0]); }, {{3, 4}});

    auto y = ops::add(Var(Tensor::from({1, 2}, {2, 1})), Var(Tensor::from({10, 20, 30}, {1, 3})));
    CHECK(y.shape() == Shape{2, 3});
    CHECK(y.value()[5] == 32.0);
}

TEST_CASE("layout ops") {
    expect_grad_ok([](auto& v) { return ops::permute(v[0], {2, 0, 1}); }, {{2, 3, 4}});
    expect_grad_ok([](auto& v) { return ops::narrow(v[0], 1, 1, 2); }, {{2, 4, 3}});
    expect_grad_ok([](auto& v) { return ops::concat({v[0], v[1]}, 1); }, {{2, 1, 3}, {2, 2, 3}});
    expect_grad_ok([](auto& v) { return ops::reshape(v[0], {6, 2}); }, {{3, 4}});

    auto p = ops::permute(Var(Tensor::from({0, 1, 2, 3, 4, 5}, {2, 3})), {1, 0});
    CHECK(p.value().at({2, 1}) == 5.0);
    CHECK(p.value().at({1, 0}) == 1.0);
}

TEST_CASE("linear, attention and norms") {
    expect_grad_ok([](auto& v) { return ops::linear(v[0], v[1], v[2]); }, {{2, 3, 4}, {5, 4}, {5}});
    expect_grad_ok([](auto& v) { return ops::linear(v[0], v[1]); }, {{3, 4}, {2, 4}});
    expect_grad_ok([](auto& v) { return ops::attention(v[0], v[1], v[2], 0.7); }, {{2, 3, 4}, {2, 5, 4}, {2, 5, 2}});
    expect_grad_ok([](auto& v) { return ops::layer_norm(v[0], v[1], v[2]); }, {{2, 3, 6}, {6}, {6}});
    expect_grad_ok([](auto& v) { return ops::batch_norm(v[0], v[1], v[2]); }, {{4, 3, 5}, {5}, {5}});

    auto y = ops::linear(Var(Tensor::from({1, 2}, {1, 2})), Var(Tensor::from({1, 0, 0, 1, 1, 1}, {3, 2})),
                         Var(Tensor::from({0, 0, 0.5}, {3})));
    CHECK(y.value()[0] == 1.0);
    CHECK(y.value()[1] == 2.0);
    CHECK(y.value()[2] == 3.5);
}

TEST_CASE("spatial ops") {
    expect_grad_ok([](auto& v) { return ops::soft_split(v[0], 4, 4, 3, 2, 1); }, {{2, 16, 3}});
    expect_grad_ok([](auto& v) { return ops::conv2d(v[0], v[1], v[2], 1); }, {{2, 3, 5, 4}, {2, 3, 3, 3}, {2}});
    expect_grad_ok([](auto& v) { return ops::conv2d(v[0], v[1], Var{}, 0); }, {{1, 2, 3, 3}, {3, 2, 1, 1}});
    expect_grad_ok([](auto& v) { return ops::upsample_bilinear(v[0], 7, 5); }, {{2, 2, 3, 2}});
    expect_grad_ok([](auto& v) { return ops::global_avg_pool(v[0]); }, {{2, 3, 4, 4}});
    expect_grad_ok([](auto& v) { return ops::global_max_pool(v[0]); }, {{2, 3, 4, 4}});
    expect_grad_ok([](auto& v) { return ops::channel_mean(v[0]); }, {{2, 3, 4, 4}});
    expect_grad_ok([](auto& v) { return ops::channel_max(v[0]); }, {{2, 3, 4, 4}});
    expect_grad_ok([](auto& v) { return ops::mean(v[0]); }, {{3, 3}});
}

TEST_CASE("bce gradient and values") {
    Rng rng(3);
    Tensor target = random_tensor({2, 1, 3, 3}, rng, 0.0, 1.0);
    expect_grad_ok([&](auto& v) { return ops::bce_mean(v[0], target); }, {{2, 1, 3, 3}}, 5, 0.05, 0.95);

    auto one = [](double p, double g) {
        return ops::bce_mean(Var(Tensor::from({p}, {1})), Tensor::from({g}, {1})).value()[0];
    };
    CHECK(one(0.5, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(one(0.25, 1.0) == doctest::Approx(-std::log(0.25)).epsilon(1e-12));
    CHECK(one(1.0, 1.0) <= 1e-6);
    CHECK(one(0.0, 0.0) <= 1e-6);
}

TEST_CASE("bilinear upsample matches the half-pixel source rule") {
    // 1×2 -> 1×4: sources at x = (i + 0.5) / 2 - 0.5 = -0.25, 0.25, 0.75, 1.25, clamped at the border.
    auto y = ops::upsample_bilinear(Var(Tensor::from({0, 4}, {1, 1, 1, 2})), 1, 4);
    CHECK(y.value()[0] == doctest::Approx(0.0));
    CHECK(y.value()[1] == doctest::Approx(1.0));
    CHECK(y.value()[2] == doctest::Approx(3.0));
    CHECK(y.value()[3] == doctest::Approx(4.0));
}

TEST_CASE("conv2d agrees with a direct loop") {
    Rng rng(11);
    Tensor x = random_tensor({2, 3, 5, 6}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
    auto y = ops::conv2d(Var(x), Var(w), Var(b), 1).value();
    double worst = 0.0;
    for (int n = 0; n < 2; ++n)
        for (int o = 0; o < 4; ++o)
            for (int i = 0; i < 5; ++i)
                for (int j = 0; j < 6; ++j) {
                    double acc = b[o];
                    for (int c = 0; c < 3; ++c)
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                const int yy = i + dy, xx = j + dx;
                                if (yy < 0 || yy >= 5 || xx < 0 || xx >= 6) continue;
                                acc += x.at({n, c, yy, xx}) * w.at({o, c, dy + 1, dx + 1});
                            }
                    worst = std::max(worst, std::abs(acc - y.at({n, o, i, j})));
                }
    CHECK(worst < 1e-12);
}

TEST_CASE("no tape is recorded under NoGradGuard") {
    Var x(Tensor::ones({2}), true);
    NoGradGuard guard;
    auto y = ops::mul(x, x);
    CHECK_FALSE(y.requires_grad());
}
