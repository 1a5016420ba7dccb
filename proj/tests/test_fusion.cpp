#include <cmath>

#include "doctest.h"
#include "omnisal/fusion.hpp"
#include "omnisal/model.hpp"
#include "omnisal/ops.hpp"
#include "support/check.hpp"

using namespace omnisal;
using namespace omnisal::fusion;
using omnisal::testing::random_tensor;

namespace {

core::TokenSequence tokens(const Tensor& t, int64_t rows, int64_t cols) { return {Var(t), rows, cols}; }

void set_all(ParamStore& store, const std::string& prefix, double v) {
    for (auto& e : store.entries()) {
        if (e.name.rfind(prefix, 0) == 0) const_cast<Var&>(e.var).mutable_value().fill(v);
    }
}

Tensor paired_images(int64_t b, int64_t size, Rng& rng, bool duplicate) {
    Tensor rgb = random_tensor({b, 3, size, size}, rng, -2, 2);
    Tensor aux = duplicate ? rgb : random_tensor({b, 3, size, size}, rng, -2, 2);
    return ops::concat({Var(rgb), Var(aux)}, 0).value();
}

}  // namespace

TEST_CASE("token fusion") {
    ModelConfig c;
    Rng rng(1);
    ParamStore store;
    TokenFusion tfm(c, store, rng);
    const double count = static_cast<double>(store.count("tfm."));
    CHECK(std::abs(count / 288e3 - 1.0) <= 0.05);

    SUBCASE("identical streams stay bit-equal") {
        Tensor t = random_tensor({2, 16, 64}, rng);
        auto s = tfm.streams(tokens(t, 4, 4), tokens(t, 4, 4));
        CHECK(max_abs_diff(s.rgb.value(), s.aux.value()) == 0.0);
        auto merged = TokenFusion::merge(s).value();
        for (int64_t i = 0; i < merged.numel(); ++i) CHECK(merged[i] == 2.0 * s.rgb.value()[i]);
    }
    SUBCASE("token permutation commutes with fusion") {
        Tensor r = random_tensor({1, 4, 64}, rng), d = random_tensor({1, 4, 64}, rng);
        const int perm[4] = {2, 0, 3, 1};
        auto permuted = [&](const Tensor& t) {
            Tensor out(t.shape());
            for (int i = 0; i < 4; ++i)
                for (int ch = 0; ch < 64; ++ch) out.at({0, i, ch}) = t.at({0, perm[i], ch});
            return out;
        };
        auto y = tfm(tokens(r, 2, 2), tokens(d, 2, 2)).values.value();
        auto yp = tfm(tokens(permuted(r), 2, 2), tokens(permuted(d), 2, 2)).values.value();
        CHECK(max_abs_diff(yp, permuted(y)) < 1e-12);
    }
    SUBCASE("mismatched streams are rejected") {
        CHECK_THROWS_AS(tfm(tokens(Tensor({1, 4, 64}), 2, 2), tokens(Tensor({2, 4, 64}), 2, 2)), ShapeError);
    }
}

TEST_CASE("cbam gating") {
    Rng rng(2);
    ParamStore store;
    auto cbam = Cbam::create(store, "cbam", 64, 16, 7, rng);
    Tensor f = random_tensor({2, 64, 6, 5}, rng);
    auto y = cbam(Var(f));
    CHECK(y.shape() == f.shape());
    for (const auto& gate : {cbam.channel_gate(Var(f)), cbam.spatial_gate(Var(f))}) {
        for (double v : gate.value().values()) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
    const Tensor zero_out = cbam(Var(Tensor::zeros({1, 64, 3, 3}))).value();
    for (double v : zero_out.values()) CHECK(v == 0.0);

    // Saturated logits: positive input, large positive weights drive both gates to 1.
    set_all(store, "cbam", 50.0);
    Tensor pos = random_tensor({1, 64, 4, 4}, rng, 0.5, 1.0);
    CHECK(max_abs_diff(cbam(Var(pos)).value(), pos) < 1e-12);
}

TEST_CASE("feature fusion, dual conv and multi-level fusion") {
    ModelConfig c;
    Rng rng(3);
    ParamStore store;
    auto ffm = FeatureFusion::create(store, "ffm", c, rng);
    CHECK(std::abs(static_cast<double>(store.count("ffm.")) / 71e3 - 1.0) <= 0.05);
    Tensor a = random_tensor({2, 64, 28, 28}, rng), s = random_tensor({2, 64, 28, 28}, rng);
    auto y = ffm(Var(a), Var(s), Var(s));
    CHECK(y.shape() == a.shape());
    CHECK(y.value().all_finite());
    CHECK_THROWS_AS(ffm(Var(a), Var(s), Var(Tensor({2, 64, 14, 14}))), ShapeError);

    auto dual = DualConv::create(store, "dual", 64, rng);
    CHECK(dual(Var(a), Var(s), Var(s)).shape() == a.shape());

    auto mffm = MultiLevelFusion::create(store, "mffm", c, rng);
    CHECK(std::abs(static_cast<double>(store.count("mffm.")) / 141e3 - 1.0) <= 0.05);
    auto out = mffm(Var(random_tensor({1, 64, 14, 14}, rng)), Var(random_tensor({1, 64, 28, 28}, rng)),
                    Var(random_tensor({1, 64, 56, 56}, rng)));
    CHECK(out.shape() == Shape{1, 64, 56, 56});
    CHECK_THROWS_AS(mffm(Var(Tensor({1, 64, 28, 28})), Var(Tensor({1, 64, 14, 14})), Var(Tensor({1, 64, 56, 56}))),
                    ShapeError);

    const double k = 0.3;
    auto flat = mffm(Var(Tensor({1, 64, 14, 14}, k)), Var(Tensor({1, 64, 28, 28}, k)), Var(Tensor({1, 64, 56, 56}, k)))
                    .value();
    double spread = 0.0;
    for (int64_t ch = 0; ch < 64; ++ch)
        for (int64_t i = 1; i < 55; ++i)
            for (int64_t j = 1; j < 55; ++j) spread = std::max(spread, std::abs(flat.at({0, ch, i, j}) - flat.at({0, ch, 1, 1})));
    CHECK(spread < 1e-12);
}

TEST_CASE("prediction head") {
    Rng rng(4);
    ParamStore store;
    auto head = PredictionHead::create(store, "head", 8, rng);
    auto p = saliency_from_logits(Var(Tensor::zeros({2, 1, 4, 4})), 16);
    CHECK(p.shape() == Shape{2, 1, 16, 16});
    for (double v : p.value().values()) CHECK(v == 0.5);

    Tensor logits = random_tensor({1, 1, 5, 5}, rng);
    auto base = saliency_from_logits(Var(logits), 20).value();
    logits.at({0, 0, 2, 3}) += 0.7;
    auto bumped = saliency_from_logits(Var(logits), 20).value();
    for (int64_t i = 0; i < base.numel(); ++i) CHECK(bumped[i] >= base[i]);

    auto y = head(Var(random_tensor({1, 8, 6, 6}, rng)), 24);
    CHECK(y.shape() == Shape{1, 1, 24, 24});
}

TEST_CASE("saliency model forward") {
    auto c = ModelConfig::tiny();
    c.seed = 7;
    SaliencyModel model(c);
    Rng rng(5);
    NoGradGuard g;

    SUBCASE("paired batch gives one map per pair, strictly inside (0, 1)") {
        auto out = model.forward(Var(paired_images(4, 32, rng, false)), Modality::rgbd);
        CHECK(out.saliency.shape() == Shape{4, 1, 32, 32});
        for (double v : out.saliency.value().values()) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
    SUBCASE("pre-fusion rgb features ignore which aux modality accompanies them") {
        Tensor rgb = random_tensor({2, 3, 32, 32}, rng);
        auto with = [&](Modality m) {
            Tensor aux = random_tensor({2, 3, 32, 32}, rng);
            return model.forward(ops::concat({Var(rgb), Var(aux)}, 0), m);
        };
        auto d = with(Modality::rgbd), t = with(Modality::rgbt);
        for (size_t i = 0; i < 3; ++i) {
            CHECK(max_abs_diff(d.rgb_levels[i].values.value(), t.rgb_levels[i].values.value()) == 0.0);
        }
        CHECK(max_abs_diff(d.saliency.value(), t.saliency.value()) > 0.0);
    }
    SUBCASE("rgb fast path agrees with the paired route") {
        Var images(paired_images(2, 32, rng, true));
        auto fast = model.forward(images, Modality::rgb).saliency.value();
        auto paired = model.forward(images, Modality::rgb, Route::paired).saliency.value();
        CHECK(max_abs_diff(fast, paired) < 1e-12);
    }
    SUBCASE("rgb batches must duplicate their rows") {
        CHECK_THROWS_AS(model.forward(Var(paired_images(1, 32, rng, false)), Modality::rgb), ContractError);
        CHECK_THROWS_AS(model.forward(Var(Tensor({3, 3, 32, 32})), Modality::rgbd), ContractError);
    }
    SUBCASE("seeded construction is reproducible") {
        SaliencyModel again(c);
        Var images(paired_images(1, 32, rng, false));
        CHECK(max_abs_diff(model.predict(images, Modality::rgbt).value(), again.predict(images, Modality::rgbt).value()) ==
              0.0);
    }
}

TEST_CASE("every fusion and decoder weight receives gradient") {
    auto c = ModelConfig::tiny();
    SaliencyModel model(c);
    Rng rng(6);
    auto out = model.forward(Var(paired_images(2, 32, rng, false)), Modality::rgbt);
    backward(ops::bce_mean(out.saliency, random_tensor({2, 1, 32, 32}, rng, 0, 1)));
    for (const auto& e : model.params().entries()) {
        double norm = 0.0;
        for (double v : e.var.grad().values()) norm += std::abs(v);
        CHECK_MESSAGE(norm > 0.0, e.name);
    }
}

TEST_CASE("ablation flags remove whole submodules") {
    auto count = [](bool tfm, bool ffm, bool mffm) {
        ModelConfig c;
        c.ablation = {tfm, ffm, mffm};
        SaliencyModel m(c);
        return m.params().count();
    };
    const auto base = count(false, false, false), with_tfm = count(true, false, false),
               with_ffm = count(true, true, false), full = count(true, true, true);
    CHECK(base < with_tfm);
    CHECK(with_tfm < with_ffm);
    CHECK(with_ffm < full);
}
