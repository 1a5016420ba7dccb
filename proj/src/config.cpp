#include "omnisal/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace omnisal {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    if (trim(s).empty()) return out;
    std::string item;
    std::istringstream in(s);
    while (std::getline(in, item, sep)) out.push_back(trim(item));
    return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
    T v{};
    const auto t = trim(text);
    const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
        throw ConfigError(key + ": cannot parse '" + text + "'");
    }
    return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
    const auto t = trim(text);
    if (t == "true" || t == "1") return true;
    if (t == "false" || t == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + text + "'");
}

std::string join(const std::vector<std::string>& items, const char* sep) {
    std::string out;
    for (size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
    return out;
}

template <typename T, typename F>
std::string join_numbers(const T& items, F fmt) {
    std::vector<std::string> parts;
    for (const auto& v : items) parts.push_back(fmt(v));
    return join(parts, ",");
}

std::array<double, 3> parse_triple(const std::string& key, const std::string& text) {
    auto parts = split(text, ',');
    if (parts.size() != 3) throw ConfigError(key + ": expected three comma-separated numbers");
    return {parse_number<double>(key, parts[0]), parse_number<double>(key, parts[1]), parse_number<double>(key, parts[2])};
}

std::string str(int64_t v) { return std::to_string(v); }
std::string str(uint64_t v) { return std::to_string(v); }
std::string str(bool v) { return v ? "true" : "false"; }

std::string kernels_text(const std::vector<SoftSplitStage>& k) {
    std::vector<std::string> parts;
    for (const auto& s : k) parts.push_back(str(s.kernel) + "," + str(s.stride) + "," + str(s.padding));
    return join(parts, ";");
}

std::vector<std::pair<std::string, std::string>> model_entries(const ModelConfig& m, bool with_seed) {
    std::vector<std::pair<std::string, std::string>> e{
        {"model.input_size", str(m.input_size)},
        {"model.t2t_kernels", kernels_text(m.t2t_kernels)},
        {"model.token_dim", str(m.token_dim)},
        {"model.embed_dim", str(m.embed_dim)},
        {"model.depth", str(m.depth)},
        {"model.heads", str(m.heads)},
        {"model.mlp_ratio", format_double(m.mlp_ratio)},
        {"model.reduced_dim", str(m.reduced_dim)},
        {"model.tfm_depth", str(m.tfm_depth)},
        {"model.tfm_heads", str(m.tfm_heads)},
        {"model.tfm_mlp_ratio", format_double(m.tfm_mlp_ratio)},
        {"model.cbam_reduction", str(m.cbam_reduction)},
        {"model.spatial_kernel", str(m.spatial_kernel)},
        {"model.mffm_reduction", str(m.mffm_reduction)},
        {"model.norm", to_string(m.norm_kind)},
        {"model.use_tfm", str(m.ablation.use_tfm)},
        {"model.use_ffm", str(m.ablation.use_ffm)},
        {"model.use_mffm", str(m.ablation.use_mffm)},
    };
    if (with_seed) e.emplace_back("model.seed", str(m.seed));
    return e;
}

}  // namespace

std::string format_double(double v) {
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

RunConfig RunConfig::from_preset(const std::string& name) {
    RunConfig c;
    c.preset = name;
    if (name == "full") {
        c.model = ModelConfig::full();
        c.train = train::TrainConfig::full();
    } else if (name == "desk") {
        c.model = ModelConfig::desk();
        c.train = train::TrainConfig::desk();
    } else if (name == "tiny") {
        c.model = ModelConfig::tiny();
        c.train = train::TrainConfig::desk();
    } else {
        throw ConfigError("preset must be full, desk or tiny, got '" + name + "'");
    }
    return c;
}

void RunConfig::set(const std::string& key, const std::string& value) {
    auto& m = model;
    auto& t = train;
    using Setter = std::function<void(const std::string&)>;
    auto i64 = [&](int64_t& f) { return Setter([&f, &key](const std::string& v) { f = parse_number<int64_t>(key, v); }); };
    auto u64 = [&](uint64_t& f) { return Setter([&f, &key](const std::string& v) { f = parse_number<uint64_t>(key, v); }); };
    auto dbl = [&](double& f) { return Setter([&f, &key](const std::string& v) { f = parse_number<double>(key, v); }); };
    auto flag = [&](bool& f) { return Setter([&f, &key](const std::string& v) { f = parse_bool(key, v); }); };
    auto list = [&](std::vector<std::string>& f) { return Setter([&f](const std::string& v) { f = split(v, ','); }); };

    const std::map<std::string, Setter> setters{
        {"preset",
         [&](const std::string& v) {
             const auto p = from_preset(trim(v));
             preset = p.preset;
             model = p.model;
             train = p.train;
         }},
        {"model.input_size", i64(m.input_size)},
        {"model.t2t_kernels",
         [&](const std::string& v) {
             std::vector<SoftSplitStage> stages;
             for (const auto& s : split(v, ';')) {
                 auto p = split(s, ',');
                 if (p.size() != 3) throw ConfigError(key + ": each stage is kernel,stride,padding");
                 stages.push_back({parse_number<int64_t>(key, p[0]), parse_number<int64_t>(key, p[1]),
                                   parse_number<int64_t>(key, p[2])});
             }
             m.t2t_kernels = stages;
         }},
        {"model.token_dim", i64(m.token_dim)},
        {"model.embed_dim", i64(m.embed_dim)},
        {"model.depth", i64(m.depth)},
        {"model.heads", i64(m.heads)},
        {"model.mlp_ratio", dbl(m.mlp_ratio)},
        {"model.reduced_dim", i64(m.reduced_dim)},
        {"model.tfm_depth", i64(m.tfm_depth)},
        {"model.tfm_heads", i64(m.tfm_heads)},
        {"model.tfm_mlp_ratio", dbl(m.tfm_mlp_ratio)},
        {"model.cbam_reduction", i64(m.cbam_reduction)},
        {"model.spatial_kernel", i64(m.spatial_kernel)},
        {"model.mffm_reduction", i64(m.mffm_reduction)},
        {"model.norm", [&](const std::string& v) { m.norm_kind = parse_norm_kind(trim(v)); }},
        {"model.use_tfm", flag(m.ablation.use_tfm)},
        {"model.use_ffm", flag(m.ablation.use_ffm)},
        {"model.use_mffm", flag(m.ablation.use_mffm)},
        {"model.seed", u64(m.seed)},
        {"train.lr0", dbl(t.lr0)},
        {"train.batch_size", i64(t.batch_size)},
        {"train.total_steps", i64(t.total_steps)},
        {"train.decay_steps",
         [&](const std::string& v) {
             t.decay_steps.clear();
             for (const auto& s : split(v, ',')) t.decay_steps.push_back(parse_number<int64_t>(key, s));
         }},
        {"train.decay_factor", dbl(t.decay_factor)},
        {"train.beta1", dbl(t.beta1)},
        {"train.beta2", dbl(t.beta2)},
        {"train.adam_eps", dbl(t.adam_eps)},
        {"train.seed", u64(t.seed)},
        {"train.checkpoint_every", i64(t.checkpoint_every)},
        {"data.mean", [&](const std::string& v) { mean = parse_triple(key, v); }},
        {"data.std", [&](const std::string& v) { std = parse_triple(key, v); }},
        {"data.train_manifests", list(train_manifests)},
        {"data.eval_manifests", list(eval_manifests)},
        {"eval.batch", i64(eval_batch)},
        {"bench.batch", i64(bench_batch)},
        {"bench.warmup", i64(bench_warmup)},
        {"bench.iters", i64(bench_iters)},
        {"demo.rows", i64(demo_rows)},
        {"demo.channels", i64(demo_channels)},
        {"demo.trials", i64(demo_trials)},
    };
    auto it = setters.find(trim(key));
    if (it == setters.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second(value);
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
    std::vector<std::pair<std::string, std::string>> e{{"preset", preset}};
    for (auto& kv : model_entries(model, true)) e.push_back(kv);
    const auto& t = train;
    std::vector<std::pair<std::string, std::string>> rest{
        {"train.lr0", format_double(t.lr0)},
        {"train.batch_size", str(t.batch_size)},
        {"train.total_steps", str(t.total_steps)},
        {"train.decay_steps", join_numbers(t.decay_steps, [](int64_t v) { return str(v); })},
        {"train.decay_factor", format_double(t.decay_factor)},
        {"train.beta1", format_double(t.beta1)},
        {"train.beta2", format_double(t.beta2)},
        {"train.adam_eps", format_double(t.adam_eps)},
        {"train.seed", str(t.seed)},
        {"train.checkpoint_every", str(t.checkpoint_every)},
        {"data.mean", join_numbers(mean, format_double)},
        {"data.std", join_numbers(std, format_double)},
        {"data.train_manifests", join(train_manifests, ",")},
        {"data.eval_manifests", join(eval_manifests, ",")},
        {"eval.batch", str(eval_batch)},
        {"bench.batch", str(bench_batch)},
        {"bench.warmup", str(bench_warmup)},
        {"bench.iters", str(bench_iters)},
        {"demo.rows", str(demo_rows)},
        {"demo.channels", str(demo_channels)},
        {"demo.trials", str(demo_trials)},
    };
    e.insert(e.end(), rest.begin(), rest.end());
    return e;
}

std::string RunConfig::serialize() const {
    std::string out;
    for (const auto& [k, v] : entries()) out += k + " = " + v + "\n";
    return out;
}

RunConfig RunConfig::parse(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> kvs;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (trim(line).empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
        kvs.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    RunConfig c;
    for (const auto& [k, v] : kvs) {
        if (k == "preset") c.set(k, v);
    }
    for (const auto& [k, v] : kvs) {
        if (k != "preset") c.set(k, v);
    }
    return c;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

data::Preprocess RunConfig::preprocess() const {
    data::Preprocess p;
    p.input_size = model.input_size;
    p.mean = mean;
    p.std = std;
    return p;
}

void RunConfig::validate() const {
    model.validate();
    train.validate();
    for (double s : std) {
        if (!(s > 0.0)) throw ConfigError("data.std entries must be positive");
    }
    if (eval_batch < 1 || bench_batch < 1) throw ConfigError("batch sizes must be at least 1");
    if (bench_warmup < 1) throw ConfigError("bench.warmup must be at least 1");
    if (bench_iters < 1) throw ConfigError("bench.iters must be at least 1");
    if (demo_rows < 1 || demo_channels < 1 || demo_trials < 1) throw ConfigError("demo sizes must be positive");
}

std::string model_signature(const ModelConfig& config) {
    std::string out;
    for (const auto& [k, v] : model_entries(config, false)) out += k + "=" + v + "\n";
    return out;
}

std::string model_config_hash(const ModelConfig& config) {
    uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : model_signature(config)) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace omnisal
