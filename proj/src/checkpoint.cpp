#include "omnisal/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"

namespace omnisal::train {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint payload assumes a little-endian host");

constexpr char kMagic[8] = {'O', 'S', 'C', 'K', 'P', 'T', '0', '1'};

using nlohmann::json;

struct Loaded {
    json header;
    std::vector<double> payload;
};

Loaded read_file(const std::filesystem::path& path, bool with_payload) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    char magic[8];
    uint64_t len = 0;
    in.read(magic, 8);
    in.read(reinterpret_cast<char*>(&len), 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw CheckpointError(path.string() + " is not a checkpoint file");
    std::string text(len, '\0');
    in.read(text.data(), static_cast<std::streamsize>(len));
    if (!in) throw CheckpointError(path.string() + ": truncated header");
    Loaded l;
    try {
        l.header = json::parse(text);
    } catch (const json::exception& e) {
        throw CheckpointError(path.string() + ": bad header: " + e.what());
    }
    if (with_payload) {
        const auto start = in.tellg();
        in.seekg(0, std::ios::end);
        const auto bytes = static_cast<uint64_t>(in.tellg() - start);
        in.seekg(start);
        if (bytes % sizeof(double) != 0) throw CheckpointError(path.string() + ": payload is not a whole number of doubles");
        l.payload.resize(bytes / sizeof(double));
        in.read(reinterpret_cast<char*>(l.payload.data()), static_cast<std::streamsize>(bytes));
        if (!in) throw CheckpointError(path.string() + ": truncated payload");
    }
    return l;
}

CheckpointMeta meta_of(const json& h, const std::filesystem::path& path) {
    CheckpointMeta m;
    try {
        m.format_version = h.at("format_version").get<int>();
        if (m.format_version != kCheckpointVersion) {
            throw CheckpointError(path.string() + ": format version " + std::to_string(m.format_version) +
                                  " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
        }
        m.config_hash = h.at("config_hash").get<std::string>();
        m.run_config = RunConfig::parse(h.at("run_config").get<std::string>());
        m.step = h.at("step").get<int64_t>();
        m.rng_state = h.at("rng_state").get<std::string>();
    } catch (const json::exception& e) {
        throw CheckpointError(path.string() + ": incomplete header: " + e.what());
    }
    return m;
}

void check_hash(const CheckpointMeta& meta, const ModelConfig& model, const std::filesystem::path& path) {
    const auto expected = model_config_hash(model);
    if (meta.config_hash != expected) {
        throw CheckpointError(path.string() + ": config hash " + meta.config_hash + " does not match the model (" +
                              expected + "); the checkpoint was written for a different architecture");
    }
}

// Copies tensors of one group from the payload into `targets`, matched by name.
void restore_group(const Loaded& l, const std::string& group, const std::vector<std::string>& names,
                   const std::vector<Tensor*>& targets, const std::filesystem::path& path) {
    std::map<std::string, const json*> found;
    for (const auto& t : l.header.at("tensors")) {
        if (t.at("group").get<std::string>() == group) found[t.at("name").get<std::string>()] = &t;
    }
    if (found.size() != names.size()) {
        throw CheckpointError(path.string() + ": " + group + " holds " + std::to_string(found.size()) +
                              " tensors, model expects " + std::to_string(names.size()));
    }
    for (size_t i = 0; i < names.size(); ++i) {
        auto it = found.find(names[i]);
        if (it == found.end()) throw CheckpointError(path.string() + ": missing " + group + " tensor " + names[i]);
        const auto shape = it->second->at("shape").get<Shape>();
        const auto offset = it->second->at("offset").get<uint64_t>();
        Tensor& dst = *targets[i];
        if (shape != dst.shape()) {
            throw CheckpointError(path.string() + ": " + names[i] + " has shape " + shape_str(shape) + ", expected " +
                                  shape_str(dst.shape()));
        }
        if (offset + static_cast<uint64_t>(dst.numel()) > l.payload.size()) {
            throw CheckpointError(path.string() + ": " + names[i] + " runs past the payload");
        }
        std::copy_n(l.payload.begin() + static_cast<std::ptrdiff_t>(offset), dst.numel(), dst.data());
    }
}

std::vector<std::string> param_names(const ParamStore& store) {
    std::vector<std::string> out;
    for (const auto& e : store.entries()) out.push_back(e.name);
    return out;
}

std::vector<Tensor*> param_targets(ParamStore& store) {
    std::vector<Tensor*> out;
    for (const auto& e : store.entries()) out.push_back(&Var(e.var).mutable_value());
    return out;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Trainer& trainer, const RunConfig& run_config,
                     const std::string& rng_state) {
    const auto& store = trainer.model().params();
    const auto& adam = trainer.optimizer();
    json tensors = json::array();
    std::vector<const Tensor*> order;
    uint64_t offset = 0;
    auto add = [&](const std::string& name, const std::string& group, const Tensor& t) {
        tensors.push_back({{"name", name}, {"group", group}, {"shape", t.shape()}, {"dtype", "f64"}, {"offset", offset}});
        order.push_back(&t);
        offset += static_cast<uint64_t>(t.numel());
    };
    const auto& entries = store.entries();
    for (size_t i = 0; i < entries.size(); ++i) add(entries[i].name, "param", entries[i].var.value());
    for (size_t i = 0; i < entries.size(); ++i) add(entries[i].name, "adam_m", adam.first_moments()[i]);
    for (size_t i = 0; i < entries.size(); ++i) add(entries[i].name, "adam_v", adam.second_moments()[i]);

    RunConfig rc = run_config;
    rc.model = trainer.model().config();
    rc.train = trainer.config();
    const json header{{"format_version", kCheckpointVersion},
                      {"config_hash", model_config_hash(rc.model)},
                      {"run_config", rc.serialize()},
                      {"step", trainer.step()},
                      {"adam_steps", adam.steps_taken()},
                      {"rng_state", rng_state},
                      {"tensors", tensors}};
    const std::string text = header.dump();
    const uint64_t len = text.size();

    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
        out.write(kMagic, 8);
        out.write(reinterpret_cast<const char*>(&len), 8);
        out.write(text.data(), static_cast<std::streamsize>(len));
        for (const Tensor* t : order) {
            out.write(reinterpret_cast<const char*>(t->data()), static_cast<std::streamsize>(t->numel() * sizeof(double)));
        }
        if (!out) throw CheckpointError("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& path) {
    return meta_of(read_file(path, false).header, path);
}

CheckpointMeta load_weights(const std::filesystem::path& path, SaliencyModel& model) {
    auto l = read_file(path, true);
    auto meta = meta_of(l.header, path);
    check_hash(meta, model.config(), path);
    restore_group(l, "param", param_names(model.params()), param_targets(model.params()), path);
    return meta;
}

CheckpointMeta load_checkpoint(const std::filesystem::path& path, Trainer& trainer) {
    auto l = read_file(path, true);
    auto meta = meta_of(l.header, path);
    check_hash(meta, trainer.model().config(), path);
    auto& store = trainer.model().params();
    const auto names = param_names(store);
    restore_group(l, "param", names, param_targets(store), path);
    auto moments = [](std::vector<Tensor>& v) {
        std::vector<Tensor*> out;
        for (auto& t : v) out.push_back(&t);
        return out;
    };
    restore_group(l, "adam_m", names, moments(trainer.optimizer().first_moments()), path);
    restore_group(l, "adam_v", names, moments(trainer.optimizer().second_moments()), path);
    trainer.optimizer().set_steps_taken(l.header.at("adam_steps").get<int64_t>());
    trainer.set_step(meta.step);
    return meta;
}

}  // namespace omnisal::train
