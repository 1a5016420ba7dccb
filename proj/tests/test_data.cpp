#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "doctest.h"
#include "omnisal/backbone.hpp"
#include "omnisal/log.hpp"
#include "omnisal/synthetic.hpp"
#include "support/tempdir.hpp"

using namespace omnisal;
using namespace omnisal::data;
using omnisal::testing::TempDir;

namespace {

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

Preprocess raw(int64_t size) {
    Preprocess p;
    p.input_size = size;
    p.mean = {0, 0, 0};
    p.std = {1, 1, 1};
    return p;
}

std::vector<Dataset> sized(const std::vector<int>& sizes) {
    std::vector<Dataset> out;
    for (size_t d = 0; d < sizes.size(); ++d) {
        Dataset ds{"d" + std::to_string(d), Modality::rgb, {}};
        for (int i = 0; i < sizes[d]; ++i) ds.records.push_back({ds.id, Modality::rgb, std::to_string(i), {}, "g"});
        out.push_back(ds);
    }
    return out;
}

}  // namespace

TEST_CASE("manifest parsing") {
    TempDir dir("manifest");
    for (const char* f : {"a.png", "b.png", "c.png"}) write_text(dir / f, "x");

    write_text(dir / "m.tsv",
               "# comment\n"
               "duts\trgb\ta.png\t-\tc.png\n"
               "\n"
               "njud\tRGBD\ta.png\tb.png\tc.png\n"
               "vt\trgbt\tb.png\ta.png\tc.png\n");
    auto recs = load_manifest(dir / "m.tsv");
    REQUIRE(recs.size() == 3);
    CHECK(recs[0].modality == Modality::rgb);
    CHECK_FALSE(recs[0].aux_path);
    CHECK(recs[1].modality == Modality::rgbd);
    CHECK(recs[2].modality == Modality::rgbt);
    CHECK(recs[1].aux_path == dir / "b.png");
    CHECK(recs[2].id() == "vt/b");

    auto error_of = [&](const std::string& text) {
        write_text(dir / "bad.tsv", text);
        try {
            load_manifest(dir / "bad.tsv");
        } catch (const DataError& e) {
            return std::string(e.what());
        }
        return std::string();
    };
    CHECK(error_of("duts\trgb\ta.png\t-\tc.png\nduts\trgb\tb.png\t-\n").find("bad.tsv:2") != std::string::npos);
    CHECK(error_of("x\trgbd\ta.png\tmissing.png\tc.png\n").find("missing.png") != std::string::npos);
    CHECK(error_of("x\trgb\ta.png\t-\tc.png\nx\trgb\ta.png\t-\tb.png\n").find("duplicate") != std::string::npos);
    CHECK(error_of("x\trgbd\ta.png\t-\tc.png\n").find(":1:") != std::string::npos);
    CHECK(error_of("x\tdepth\ta.png\t-\tc.png\n").find(":1:") != std::string::npos);
    CHECK_THROWS_AS(load_manifest(dir / "nope.tsv"), DataError);

    std::vector<std::string> warnings;
    log::set_sink([&](log::Level, const std::string& m) { warnings.push_back(m); });
    write_text(dir / "empty.tsv", "");
    CHECK(load_manifest(dir / "empty.tsv").empty());
    log::reset_sink();
    CHECK(warnings.size() == 1);
}

TEST_CASE("sample loading") {
    TempDir dir("samples");
    SyntheticSpec spec;
    spec.modality = Modality::rgbd;
    spec.count = 1;
    spec.width = 640;
    spec.height = 480;
    auto rec = write_synthetic_dataset(dir.path(), spec, 3).front();

    SUBCASE("train crops are aligned across rgb, aux and gt") {
        // Make rgb and aux copies of the GT so alignment is visible pixel by pixel.
        cv::Mat gt = cv::imread(rec.gt_path.string(), cv::IMREAD_GRAYSCALE);
        cv::Mat gt3;
        cv::cvtColor(gt, gt3, cv::COLOR_GRAY2BGR);
        cv::imwrite(rec.rgb_path.string(), gt3);
        cv::imwrite(rec.aux_path->string(), gt);
        Rng rng(1);
        auto s = load_sample(rec, LoadMode::train, raw(224), &rng);
        CHECK(s.rgb.shape() == Shape{3, 224, 224});
        CHECK(s.aux.shape() == Shape{3, 224, 224});
        CHECK(s.gt.shape() == Shape{1, 224, 224});
        const int64_t hw = 224 * 224;
        double worst = 0.0;
        for (int64_t c = 0; c < 3; ++c)
            for (int64_t i = 0; i < hw; ++i) {
                worst = std::max(worst, std::abs(s.rgb[c * hw + i] - s.gt[i]));
                worst = std::max(worst, std::abs(s.aux[c * hw + i] - s.gt[i]));
            }
        CHECK(worst == 0.0);
    }
    SUBCASE("same seed, same crop; eval needs no seed") {
        Rng a(5), b(5);
        auto x = load_sample(rec, LoadMode::train, Preprocess{}, &a);
        auto y = load_sample(rec, LoadMode::train, Preprocess{}, &b);
        CHECK(max_abs_diff(x.rgb, y.rgb) == 0.0);
        CHECK(max_abs_diff(x.gt, y.gt) == 0.0);
        auto e1 = load_sample(rec, LoadMode::eval, Preprocess{});
        auto e2 = load_sample(rec, LoadMode::eval, Preprocess{});
        CHECK(max_abs_diff(e1.rgb, e2.rgb) == 0.0);
    }
    SUBCASE("normalized values stay within the range the constants imply") {
        Preprocess pre;
        auto s = load_sample(rec, LoadMode::eval, pre);
        const int64_t hw = 224 * 224;
        for (const Tensor* t : {&s.rgb, &s.aux}) {
            for (int64_t c = 0; c < 3; ++c) {
                const double lo = -pre.mean[c] / pre.std[c], hi = (1 - pre.mean[c]) / pre.std[c];
                for (int64_t i = 0; i < hw; ++i) {
                    const double v = (*t)[c * hw + i];
                    CHECK((std::isfinite(v) && v >= lo - 1e-12 && v <= hi + 1e-12));
                }
            }
        }
        for (double v : s.gt.values()) CHECK((v >= 0.0 && v <= 1.0));
    }
    SUBCASE("single-channel depth is replicated; 16-bit depth is rescaled") {
        cv::Mat depth(480, 640, CV_16UC1, cv::Scalar(19661));  // 0.3 · 65535, rounded
        cv::imwrite(rec.aux_path->string(), depth);
        auto s = load_sample(rec, LoadMode::eval, raw(32));
        for (int64_t c = 0; c < 3; ++c) CHECK(s.aux.at({c, 7, 9}) == doctest::Approx(0.3).epsilon(1e-4));
    }
    SUBCASE("undecodable image") {
        write_text(rec.rgb_path, "not a png");
        CHECK_THROWS_AS(load_sample(rec, LoadMode::eval, Preprocess{}), DataError);
    }
}

TEST_CASE("batch assembly") {
    auto sample = [](const std::string& id, Modality m, double rgb, double aux) {
        return Sample{id, m, Tensor({3, 2, 2}, rgb), Tensor({3, 2, 2}, aux), Tensor({1, 2, 2}, rgb)};
    };
    auto b = assemble_batch({sample("a", Modality::rgbt, 1, 10), sample("b", Modality::rgbt, 2, 20)});
    CHECK(b.images.shape() == Shape{4, 3, 2, 2});
    const double rows[4] = {1, 2, 10, 20};
    for (int r = 0; r < 4; ++r) CHECK(b.images[r * 12] == rows[r]);
    CHECK(b.sample_ids == std::vector<std::string>{"a", "b"});

    auto single = assemble_batch({sample("a", Modality::rgb, 3, 99)});
    CHECK(single.images[0] == 3.0);
    CHECK(single.images[12] == 3.0);

    auto [rgb, aux] = core::split_batch({Var(Tensor({4, 12, 1}, b.images.storage())), 12, 1});
    CHECK(rgb.values.value()[0] == 1.0);
    CHECK(aux.values.value()[12] == 20.0);

    CHECK_THROWS_AS(assemble_batch({sample("a", Modality::rgbt, 1, 1), sample("b", Modality::rgbd, 1, 1)}),
                    ContractError);
    CHECK_THROWS_AS(assemble_batch({}), ContractError);
}

TEST_CASE("mixed sampler") {
    SUBCASE("dataset frequencies follow dataset sizes") {
        MixedSampler s(sized({100, 50, 50}), 4, 42);
        const int n = 10000;
        std::array<int, 3> hits{};
        for (int i = 0; i < n; ++i) ++hits[s.next().dataset];
        const double p[3] = {0.5, 0.25, 0.25};
        for (int d = 0; d < 3; ++d) {
            const double sigma = std::sqrt(n * p[d] * (1 - p[d]));
            CHECK(std::abs(hits[d] - n * p[d]) <= 3 * sigma);
        }
    }
    SUBCASE("seeded and homogeneous") {
        MixedSampler a(sized({5, 7}), 3, 9), b(sized({5, 7}), 3, 9);
        for (int i = 0; i < 50; ++i) {
            auto x = a.next(), y = b.next();
            CHECK(x.dataset == y.dataset);
            for (size_t j = 0; j < 3; ++j) {
                CHECK(x.records[j].rgb_path == y.records[j].rgb_path);
                CHECK(x.records[j].dataset_id == x.records[0].dataset_id);
            }
        }
    }
    SUBCASE("one dataset, sampled without replacement per epoch") {
        MixedSampler s(sized({8}), 4, 1);
        std::set<std::string> seen;
        for (int i = 0; i < 2; ++i)
            for (const auto& r : s.next().records) seen.insert(r.rgb_path.string());
        CHECK(seen.size() == 8);
        MixedSampler small(sized({3}), 4, 1);
        CHECK(small.next().records.size() == 4);
    }
    SUBCASE("empty input") {
        CHECK_THROWS_AS(MixedSampler(sized({0, 0}), 2, 1), DataError);
    }
}

TEST_CASE("dataset grouping") {
    std::vector<SampleRecord> recs{{"a", Modality::rgb, "1", {}, "g"}, {"b", Modality::rgbd, "2", fs::path("x"), "g"},
                                   {"a", Modality::rgb, "3", {}, "g"}};
    auto ds = group_by_dataset(recs);
    REQUIRE(ds.size() == 2);
    CHECK(ds[0].records.size() == 2);
    recs.push_back({"a", Modality::rgbt, "4", fs::path("y"), "g"});
    CHECK_THROWS_AS(group_by_dataset(recs), DataError);
}
