#include "omnisal/data.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "omnisal/log.hpp"

namespace omnisal::data {

std::string SampleRecord::id() const { return dataset_id + "/" + rgb_path.stem().string(); }

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    std::istringstream in(line);
    while (std::getline(in, field, '\t')) out.push_back(field);
    if (!line.empty() && line.back() == '\t') out.emplace_back();
    return out;
}

fs::path resolve(const fs::path& base, const std::string& p) {
    fs::path path(p);
    return path.is_absolute() ? path : base / path;
}

}  // namespace

std::vector<SampleRecord> load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("manifest not found: " + path.string());
    const fs::path base = path.parent_path();
    std::vector<SampleRecord> records;
    std::set<std::string> ids;
    std::string line;
    int line_no = 0;
    auto fail = [&](const std::string& why) {
        throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + why);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto f = split_tabs(line);
        if (f.size() != 5) {
            fail("expected 5 tab-separated fields (dataset_id, modality, rgb, aux|-, gt), found " +
                 std::to_string(f.size()));
        }
        for (const auto& field : f) {
            if (field.empty()) fail("empty field");
        }
        SampleRecord rec;
        rec.dataset_id = f[0];
        try {
            rec.modality = parse_modality(f[1]);
        } catch (const std::exception& e) {
            fail(e.what());
        }
        rec.rgb_path = resolve(base, f[2]);
        if (f[3] != "-") rec.aux_path = resolve(base, f[3]);
        rec.gt_path = resolve(base, f[4]);
        if ((rec.modality == Modality::rgb) != !rec.aux_path) {
            fail(rec.modality == Modality::rgb ? "rgb records take '-' as aux path"
                                               : to_string(rec.modality) + " records need an aux path");
        }
        for (const auto* p : {&rec.rgb_path, rec.aux_path ? &*rec.aux_path : nullptr, &rec.gt_path}) {
            if (p && !fs::exists(*p)) fail("file does not exist: " + p->string());
        }
        if (!ids.insert(rec.id()).second) fail("duplicate sample id " + rec.id());
        records.push_back(std::move(rec));
    }
    if (records.empty()) log::warn("manifest " + path.string() + " has no records");
    return records;
}

std::string format_manifest_line(const SampleRecord& rec) {
    return rec.dataset_id + "\t" + to_string(rec.modality) + "\t" + rec.rgb_path.string() + "\t" +
           (rec.aux_path ? rec.aux_path->string() : std::string("-")) + "\t" + rec.gt_path.string();
}

int64_t Preprocess::train_resize() const {
    return static_cast<int64_t>(std::lround(static_cast<double>(input_size) * 256.0 / 224.0));
}

Tensor read_image(const fs::path& path, bool grayscale) {
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (raw.empty()) throw DataError("cannot decode image: " + path.string());
    double scale = 0.0;
    switch (raw.depth()) {
        case CV_8U: scale = 1.0 / 255.0; break;
        case CV_16U: scale = 1.0 / 65535.0; break;
        default: throw DataError("unsupported pixel depth in " + path.string());
    }
    if (raw.channels() == 4) cv::cvtColor(raw, raw, cv::COLOR_BGRA2BGR);
    if (raw.channels() == 3) cv::cvtColor(raw, raw, grayscale ? cv::COLOR_BGR2GRAY : cv::COLOR_BGR2RGB);
    cv::Mat img;
    raw.convertTo(img, CV_64F, scale);
    const int64_t c = img.channels(), h = img.rows, w = img.cols;
    Tensor out({c, h, w});
    for (int64_t y = 0; y < h; ++y) {
        const double* row = img.ptr<double>(static_cast<int>(y));
        for (int64_t x = 0; x < w; ++x)
            for (int64_t ch = 0; ch < c; ++ch) out[(ch * h + y) * w + x] = row[x * c + ch];
    }
    return out;
}

void write_gray_png(const fs::path& path, const Tensor& map) {
    const int64_t h = map.dim(map.rank() - 2), w = map.dim(map.rank() - 1);
    if (map.numel() != h * w) throw ShapeError("write_gray_png expects a single-channel map, got " + shape_str(map.shape()));
    cv::Mat img(static_cast<int>(h), static_cast<int>(w), CV_8UC1);
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
            const double v = std::clamp(map[y * w + x], 0.0, 1.0);
            img.at<uint8_t>(static_cast<int>(y), static_cast<int>(x)) = static_cast<uint8_t>(std::lround(v * 255.0));
        }
    if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), img)) throw DataError("cannot write " + path.string());
}

Tensor resize_image(const Tensor& chw, int64_t height, int64_t width) {
    const int64_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    if (h == height && w == width) return chw;
    Tensor out({c, height, width});
    for (int64_t ch = 0; ch < c; ++ch) {
        cv::Mat src(static_cast<int>(h), static_cast<int>(w), CV_64F, const_cast<double*>(chw.data() + ch * h * w));
        cv::Mat dst(static_cast<int>(height), static_cast<int>(width), CV_64F, out.data() + ch * height * width);
        cv::resize(src, dst, dst.size(), 0, 0, cv::INTER_LINEAR);
    }
    return out;
}

namespace {

Tensor crop(const Tensor& chw, int64_t top, int64_t left, int64_t size) {
    const int64_t c = chw.dim(0), h = chw.dim(1), w = chw.dim(2);
    Tensor out({c, size, size});
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t y = 0; y < size; ++y)
            for (int64_t x = 0; x < size; ++x) out[(ch * size + y) * size + x] = chw[(ch * h + y + top) * w + x + left];
    return out;
}

}  // namespace

Tensor to_three_channels(const Tensor& chw) {
    if (chw.dim(0) == 3) return chw;
    const int64_t hw = chw.dim(1) * chw.dim(2);
    Tensor out({3, chw.dim(1), chw.dim(2)});
    for (int64_t ch = 0; ch < 3; ++ch) std::copy(chw.data(), chw.data() + hw, out.data() + ch * hw);
    return out;
}

void normalize_image(Tensor& chw, const Preprocess& pre) {
    const int64_t hw = chw.dim(1) * chw.dim(2);
    for (int64_t ch = 0; ch < 3; ++ch)
        for (int64_t i = 0; i < hw; ++i) {
            double& v = chw[ch * hw + i];
            v = (v - pre.mean[static_cast<size_t>(ch)]) / pre.std[static_cast<size_t>(ch)];
        }
}

Sample load_sample(const SampleRecord& rec, LoadMode mode, const Preprocess& pre, Rng* rng) {
    Tensor rgb = to_three_channels(read_image(rec.rgb_path, false));
    Tensor gt = read_image(rec.gt_path, true);
    std::optional<Tensor> aux;
    if (rec.aux_path) aux = to_three_channels(read_image(*rec.aux_path, true));

    const auto same_size = [&](const Tensor& t) { return t.dim(1) == rgb.dim(1) && t.dim(2) == rgb.dim(2); };
    if (!same_size(gt)) log::warn(rec.id() + ": ground truth size differs from the RGB image; resizing");
    if (aux && !same_size(*aux)) log::warn(rec.id() + ": aux size differs from the RGB image; resizing");

    const int64_t s = pre.input_size;
    const int64_t side = mode == LoadMode::train ? pre.train_resize() : s;
    rgb = resize_image(rgb, side, side);
    gt = resize_image(gt, side, side);
    if (aux) aux = resize_image(*aux, side, side);
    if (mode == LoadMode::train && side > s) {
        if (!rng) throw std::invalid_argument("load_sample: train mode needs an rng");
        const auto span = static_cast<uint64_t>(side - s + 1);
        const auto top = static_cast<int64_t>(rng->below(span));
        const auto left = static_cast<int64_t>(rng->below(span));
        rgb = crop(rgb, top, left, s);
        gt = crop(gt, top, left, s);
        if (aux) aux = crop(*aux, top, left, s);
    }
    if (gt.dim(1) != s || rgb.dim(1) != s) throw DataError(rec.id() + ": unexpected size after preprocessing");
    normalize_image(rgb, pre);
    if (aux) normalize_image(*aux, pre);
    return {rec.id(), rec.modality, rgb, aux ? *aux : rgb, gt};
}

PairedBatch assemble_batch(const std::vector<Sample>& samples) {
    if (samples.empty()) throw ContractError("assemble_batch: empty sample list");
    const Modality m = samples.front().modality;
    const Shape img = samples.front().rgb.shape(), gt = samples.front().gt.shape();
    const auto b = static_cast<int64_t>(samples.size());
    PairedBatch batch;
    batch.modality = m;
    batch.images = Tensor({2 * b, img[0], img[1], img[2]});
    batch.gts = Tensor({b, gt[0], gt[1], gt[2]});
    const int64_t img_n = shape_numel(img), gt_n = shape_numel(gt);
    for (int64_t i = 0; i < b; ++i) {
        const auto& s = samples[static_cast<size_t>(i)];
        if (s.modality != m) {
            throw ContractError("assemble_batch: mixed modalities (" + to_string(m) + " and " + to_string(s.modality) +
                                ")");
        }
        if (s.rgb.shape() != img || s.aux.shape() != img || s.gt.shape() != gt) {
            throw ShapeError("assemble_batch: sample " + s.id + " has inconsistent shapes");
        }
        const Tensor& aux = m == Modality::rgb ? s.rgb : s.aux;
        std::copy(s.rgb.data(), s.rgb.data() + img_n, batch.images.data() + i * img_n);
        std::copy(aux.data(), aux.data() + img_n, batch.images.data() + (b + i) * img_n);
        std::copy(s.gt.data(), s.gt.data() + gt_n, batch.gts.data() + i * gt_n);
        batch.sample_ids.push_back(s.id);
    }
    return batch;
}

std::vector<Dataset> group_by_dataset(const std::vector<SampleRecord>& records) {
    std::vector<Dataset> out;
    for (const auto& r : records) {
        auto it = std::find_if(out.begin(), out.end(), [&](const Dataset& d) { return d.id == r.dataset_id; });
        if (it == out.end()) {
            out.push_back({r.dataset_id, r.modality, {}});
            it = out.end() - 1;
        }
        if (it->modality != r.modality) {
            throw DataError("dataset " + r.dataset_id + " mixes " + to_string(it->modality) + " and " +
                            to_string(r.modality) + " records");
        }
        it->records.push_back(r);
    }
    return out;
}

MixedSampler::MixedSampler(std::vector<Dataset> datasets, int64_t batch_size, uint64_t seed)
    : batch_size_(batch_size), rng_(seed) {
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    for (auto& d : datasets) {
        if (!d.records.empty()) datasets_.push_back(std::move(d));
    }
    if (datasets_.empty()) throw DataError("mixed sampler: every dataset is empty");
    order_.resize(datasets_.size());
    cursor_.resize(datasets_.size());
    for (size_t d = 0; d < datasets_.size(); ++d) {
        total_ += static_cast<int64_t>(datasets_[d].records.size());
        reshuffle(d);
    }
}

void MixedSampler::reshuffle(size_t d) {
    auto& order = order_[d];
    order.resize(datasets_[d].records.size());
    std::iota(order.begin(), order.end(), size_t{0});
    for (size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng_.below(i)]);
    cursor_[d] = 0;
}

MixedSampler::Draw MixedSampler::next() {
    auto pick = static_cast<int64_t>(rng_.below(static_cast<uint64_t>(total_)));
    size_t d = 0;
    while (pick >= static_cast<int64_t>(datasets_[d].records.size())) pick -= static_cast<int64_t>(datasets_[d++].records.size());
    Draw draw{d, {}};
    for (int64_t i = 0; i < batch_size_; ++i) {
        if (cursor_[d] == order_[d].size()) reshuffle(d);
        draw.records.push_back(datasets_[d].records[order_[d][cursor_[d]++]]);
    }
    return draw;
}

std::string MixedSampler::state() const {
    std::ostringstream out;
    for (size_t d = 0; d < datasets_.size(); ++d) {
        out << cursor_[d] << ' ' << order_[d].size();
        for (auto i : order_[d]) out << ' ' << i;
        out << '\n';
    }
    out << rng_.state();
    return out.str();
}

void MixedSampler::restore(const std::string& state) {
    std::istringstream in(state);
    auto orders = order_;
    auto cursors = cursor_;
    for (size_t d = 0; d < datasets_.size(); ++d) {
        size_t n = 0;
        in >> cursors[d] >> n;
        if (!in || n != datasets_[d].records.size() || cursors[d] > n) {
            throw DataError("sampler state does not match dataset " + datasets_[d].id);
        }
        orders[d].resize(n);
        for (auto& i : orders[d]) {
            in >> i;
            if (!in || i >= n) throw DataError("corrupt sampler state for dataset " + datasets_[d].id);
        }
    }
    in >> std::ws;
    std::string rest((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    rng_.restore(rest);
    order_ = std::move(orders);
    cursor_ = std::move(cursors);
}

}  // namespace omnisal::data
