#include "omnisal/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace omnisal::data {

namespace {

void write_png(const fs::path& path, const cv::Mat& img) {
    fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), img)) throw DataError("cannot write " + path.string());
}

cv::Scalar random_color(Rng& rng) {
    return {rng.uniform(0, 255), rng.uniform(0, 255), rng.uniform(0, 255)};
}

}  // namespace

std::vector<SampleRecord> write_synthetic_dataset(const fs::path& root, const SyntheticSpec& spec, uint64_t seed) {
    Rng rng(seed);
    const fs::path dir = root / spec.dataset_id;
    const int w = spec.width, h = spec.height;
    std::vector<SampleRecord> out;
    for (int i = 0; i < spec.count; ++i) {
        char name[16];
        std::snprintf(name, sizeof(name), "%04d.png", i);

        const cv::Point center(static_cast<int>(rng.uniform(0.3, 0.7) * w), static_cast<int>(rng.uniform(0.3, 0.7) * h));
        const cv::Size axes(static_cast<int>(rng.uniform(0.12, 0.3) * w), static_cast<int>(rng.uniform(0.12, 0.3) * h));
        const double angle = rng.uniform(0, 180);

        cv::Mat gt = cv::Mat::zeros(h, w, CV_8UC1);
        cv::ellipse(gt, center, axes, angle, 0, 360, cv::Scalar(255), cv::FILLED);

        cv::Mat rgb(h, w, CV_8UC3, random_color(rng));
        for (auto it = rgb.begin<cv::Vec3b>(); it != rgb.end<cv::Vec3b>(); ++it) {
            for (int c = 0; c < 3; ++c) (*it)[c] = cv::saturate_cast<uint8_t>((*it)[c] + rng.uniform(0, 40));
        }
        cv::ellipse(rgb, center, axes, angle, 0, 360, random_color(rng), cv::FILLED);

        SampleRecord rec;
        rec.dataset_id = spec.dataset_id;
        rec.modality = spec.modality;
        rec.rgb_path = dir / "rgb" / name;
        rec.gt_path = dir / "gt" / name;
        write_png(rec.rgb_path, rgb);
        write_png(rec.gt_path, gt);

        if (spec.modality != Modality::rgb) {
            cv::Mat aux(h, w, CV_64FC1);
            const double base = rng.uniform(0.1, 0.4), object = rng.uniform(0.6, 0.95);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const bool inside = gt.at<uint8_t>(y, x) != 0;
                    const double ramp = spec.modality == Modality::rgbd ? 0.2 * y / h : 0.05 * rng.uniform();
                    aux.at<double>(y, x) = (inside ? object : base) + ramp;
                }
            if (spec.modality == Modality::rgbt) cv::GaussianBlur(aux, aux, cv::Size(5, 5), 1.5);
            cv::Mat encoded;
            aux.convertTo(encoded, spec.depth16 ? CV_16UC1 : CV_8UC1, spec.depth16 ? 65535.0 : 255.0);
            rec.aux_path = dir / "aux" / name;
            write_png(*rec.aux_path, encoded);
        }
        out.push_back(rec);
    }
    return out;
}

void write_manifest(const fs::path& path, const std::vector<SampleRecord>& records) {
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    const fs::path base = fs::absolute(path).parent_path();
    auto rel = [&](const fs::path& p) {
        auto r = fs::absolute(p).lexically_relative(base);
        return r.empty() ? p : r;
    };
    std::ofstream out(path);
    if (!out) throw DataError("cannot write manifest " + path.string());
    for (auto rec : records) {
        rec.rgb_path = rel(rec.rgb_path);
        rec.gt_path = rel(rec.gt_path);
        if (rec.aux_path) rec.aux_path = rel(*rec.aux_path);
        out << format_manifest_line(rec) << "\n";
    }
}

}  // namespace omnisal::data
