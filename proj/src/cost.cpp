#include "omnisal/cost.hpp"

#include <chrono>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "omnisal/config.hpp"
#include "omnisal/ops.hpp"

namespace omnisal::eval {

MacCount count_flops(const ModelConfig& c, Modality modality) {
    c.validate();
    const auto res = c.stage_resolutions();
    const int64_t l1 = res[0] * res[0], l2 = res[1] * res[1], l3 = res[2] * res[2];
    const int64_t td = c.token_dim, e = c.embed_dim, r = c.reduced_dim;
    const auto& k = c.t2t_kernels;
    const int64_t in1 = 3 * k[0].kernel * k[0].kernel, in2 = td * k[1].kernel * k[1].kernel,
                  in3 = td * k[2].kernel * k[2].kernel;
    const auto hidden = static_cast<int64_t>(static_cast<double>(e) * c.mlp_ratio);

    MacCount image;  // backbone + reduction for one image
    image.layer += l1 * (in1 * 3 * td + 3 * td * td);
    image.layer += l2 * (in2 * 3 * td + 3 * td * td);
    image.layer += l3 * in3 * e;
    image.layer += c.depth * l3 * (4 * e * e + 2 * e * hidden);
    image.layer += (l1 + l2) * td * r + l3 * e * r;
    image.attention += 2 * l1 * l1 * td + 2 * l2 * l2 * td + c.depth * 2 * l3 * l3 * e;

    MacCount shared;  // everything after the batch split, once per sample
    if (c.ablation.use_tfm) {
        const auto th = static_cast<int64_t>(static_cast<double>(r) * c.tfm_mlp_ratio);
        shared.layer += c.tfm_depth * 2 * l3 * (4 * r * r + 2 * r * th);
        shared.attention += c.tfm_depth * 2 * 2 * l3 * l3 * r;
    }
    const int64_t conv3 = 9 * r * r;
    const int64_t cbam_hidden = std::max<int64_t>(1, r / c.cbam_reduction);
    const int64_t sk = c.spatial_kernel * c.spatial_kernel;
    for (int64_t l : {l3, l2, l1}) {
        shared.layer += 2 * l * conv3;
        if (c.ablation.use_ffm) shared.layer += 2 * 2 * r * cbam_hidden + l * 2 * sk;
    }
    if (c.ablation.use_mffm) {
        const int64_t mh = std::max<int64_t>(1, 3 * r / c.mffm_reduction);
        shared.layer += 3 * l1 * conv3 + 2 * 2 * 3 * r * mh + l1 * 3 * r * r;
    }
    shared.layer += l1 * 9 * r;  // head

    const int64_t passes = modality == Modality::rgb ? 1 : 2;
    return {passes * image.layer + shared.layer, passes * image.attention + shared.attention};
}

MacCount measure_macs(const SaliencyModel& model, Modality modality) {
    const int64_t s = model.config().input_size;
    Rng rng(1);
    Tensor img({2, 3, s, s});
    for (auto& v : img.values()) v = rng.uniform(-1, 1);
    if (modality == Modality::rgb) std::copy_n(img.data(), img.numel() / 2, img.data() + img.numel() / 2);
    NoGradGuard guard;
    const MacCounter before = mac_counter();
    model.forward(Var(img), modality);
    const MacCounter after = mac_counter();
    return {after.layer - before.layer, after.attention - before.attention};
}

std::vector<std::pair<std::string, int64_t>> count_params(const SaliencyModel& model) {
    std::vector<std::pair<std::string, int64_t>> out;
    for (const auto& prefix : SaliencyModel::submodules()) {
        const int64_t n = model.params().count(prefix);
        if (n > 0) out.emplace_back(prefix.substr(0, prefix.size() - 1), n);
    }
    return out;
}

double measure_fps(const SaliencyModel& model, Modality modality, int64_t batch, int64_t warmup, int64_t iters) {
    if (iters < 1) throw std::invalid_argument("measure_fps: iters must be at least 1");
    if (warmup < 1) throw std::invalid_argument("measure_fps: warmup must be at least 1");
    if (batch < 1) throw std::invalid_argument("measure_fps: batch must be at least 1");
    const int64_t s = model.config().input_size;
    Rng rng(2);
    Tensor img({2 * batch, 3, s, s});
    for (auto& v : img.values()) v = rng.uniform(-1, 1);
    if (modality == Modality::rgb) std::copy_n(img.data(), img.numel() / 2, img.data() + img.numel() / 2);
    const Var input(img);
    NoGradGuard guard;
    for (int64_t i = 0; i < warmup; ++i) model.forward(input, modality);
    const auto t0 = std::chrono::steady_clock::now();
    for (int64_t i = 0; i < iters; ++i) model.forward(input, modality);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return static_cast<double>(batch * iters) / std::max(seconds, 1e-12);
}

CostReport cost_report(const SaliencyModel& model, bool with_fps, int64_t batch, int64_t warmup, int64_t iters) {
    CostReport r;
    r.params = count_params(model);
    for (const auto& [name, n] : r.params) r.total_params += n;
    r.rgb = count_flops(model.config(), Modality::rgb);
    r.paired = count_flops(model.config(), Modality::rgbd);
    if (with_fps) {
        r.fps_batch = batch;
        r.fps_rgb = measure_fps(model, Modality::rgb, batch, warmup, iters);
        r.fps_paired = measure_fps(model, Modality::rgbd, batch, warmup, iters);
    }
    return r;
}

std::string cost_json(const CostReport& cost) {
    nlohmann::ordered_json j;
    j["convention"] = "flops_* = layer multiply-accumulates (linear + conv); flops_*_full = 2 x (layer + attention MACs)";
    j["total_params"] = cost.total_params;
    auto& p = j["params"];
    p = nlohmann::ordered_json::object();
    for (const auto& [name, n] : cost.params) p[name] = n;
    j["flops_rgb"] = cost.rgb.layer;
    j["flops_paired"] = cost.paired.layer;
    j["flops_rgb_full"] = 2 * (cost.rgb.layer + cost.rgb.attention);
    j["flops_paired_full"] = 2 * (cost.paired.layer + cost.paired.attention);
    j["flops_rgb_lt_paired"] = cost.rgb.layer < cost.paired.layer;
    if (cost.fps_batch > 0) {
        j["fps_batch"] = cost.fps_batch;
        j["fps_rgb"] = cost.fps_rgb;
        j["fps_paired"] = cost.fps_paired;
    }
    return j.dump(2) + "\n";
}

std::string cost_text(const CostReport& cost) {
    char buf[160];
    std::string out = "params total " + std::to_string(cost.total_params) + "\n";
    for (const auto& [name, n] : cost.params) {
        std::snprintf(buf, sizeof(buf), "  %-16s %10lld  (%.3fM)\n", name.c_str(), static_cast<long long>(n),
                      static_cast<double>(n) * 1e-6);
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "flops rgb    %.3fG  (full %.3fG)\nflops paired %.3fG  (full %.3fG)\n",
                  cost.rgb.gflops(), cost.rgb.gflops_full(), cost.paired.gflops(), cost.paired.gflops_full());
    out += buf;
    out += std::string("flops_rgb < flops_paired: ") + (cost.rgb.layer < cost.paired.layer ? "yes" : "NO") + "\n";
    if (cost.fps_batch > 0) {
        std::snprintf(buf, sizeof(buf), "fps rgb %.2f, paired %.2f (batch %lld)\n", cost.fps_rgb, cost.fps_paired,
                      static_cast<long long>(cost.fps_batch));
        out += buf;
    }
    return out;
}

namespace {

std::string cell(const std::optional<double>& v) {
    if (!v) return "—";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", *v);
    return buf;
}

std::string pad(const std::string& s, size_t width) {
    // Width in code points so the arrows and dashes line up.
    size_t cps = 0;
    for (unsigned char ch : s) cps += (ch & 0xC0) != 0x80 ? 1 : 0;
    return s + std::string(width > cps ? width - cps : 0, ' ');
}

std::optional<double> optional_number(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return std::stod(s);
}

}  // namespace

std::string benchmark_table(const std::vector<MetricsReport>& reports) {
    size_t name_w = 7;
    for (const auto& r : reports) name_w = std::max(name_w, r.dataset.size());
    std::string out = pad("dataset", name_w + 2) + pad("images", 8) + pad("Sm↑", 10) + pad("Fβmax↑", 10) +
                      pad("Eφmax↑", 10) + "MAE↓\n";
    for (const auto& r : reports) {
        out += pad(r.dataset, name_w + 2) + pad(std::to_string(r.images), 8) + pad(cell(r.s_measure), 10) +
               pad(cell(r.max_f), 10) + pad(cell(r.e_measure), 10) + cell(r.mae) + "\n";
    }
    return out;
}

std::string benchmark_csv(const std::vector<MetricsReport>& reports) {
    auto num = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    std::string out = "dataset,images,s_measure,max_f,e_measure,mae\n";
    for (const auto& r : reports) {
        out += r.dataset + "," + std::to_string(r.images) + "," + num(r.s_measure) + "," + num(r.max_f) + "," +
               num(r.e_measure) + "," + num(r.mae) + "\n";
    }
    return out;
}

std::vector<MetricsReport> parse_benchmark_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    std::vector<MetricsReport> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::string field;
        std::istringstream row(line);
        while (std::getline(row, field, ',')) f.push_back(field);
        if (!line.empty() && line.back() == ',') f.emplace_back();
        if (f.size() != 6) throw std::invalid_argument("benchmark csv: expected 6 fields in '" + line + "'");
        out.push_back({f[0], std::stoll(f[1]), optional_number(f[2]), optional_number(f[3]), optional_number(f[4]),
                       optional_number(f[5])});
    }
    return out;
}

}  // namespace omnisal::eval
