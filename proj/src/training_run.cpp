#include "omnisal/training_run.hpp"

#include <cstdio>
#include <fstream>

#include "omnisal/log.hpp"

namespace omnisal::train {

namespace fs = std::filesystem;

std::string format_log_line(const StepResult& r) {
    return "step=" + std::to_string(r.step) + " modality=" + to_string(r.modality) + " loss=" + format_double(r.loss) +
           " lr=" + format_double(r.lr);
}

Rng crop_rng(uint64_t seed, int64_t step) {
    // splitmix64 finalizer over the pair
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (static_cast<uint64_t>(step) + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return Rng(z ^ (z >> 31));
}

std::optional<fs::path> latest_checkpoint(const fs::path& run_dir) {
    const auto dir = run_dir / "checkpoints";
    if (!fs::is_directory(dir)) return std::nullopt;
    std::optional<fs::path> best;
    long long best_step = -1;
    for (const auto& e : fs::directory_iterator(dir)) {
        long long step = 0;
        const auto name = e.path().filename().string();
        if (e.path().extension() == ".ckpt" && std::sscanf(name.c_str(), "step-%lld.ckpt", &step) == 1 &&
            step > best_step) {
            best_step = step;
            best = e.path();
        }
    }
    return best;
}

namespace {

fs::path checkpoint_path(const fs::path& run_dir, int64_t step) {
    char name[32];
    std::snprintf(name, sizeof(name), "step-%08lld.ckpt", static_cast<long long>(step));
    return run_dir / "checkpoints" / name;
}

}  // namespace

RunSummary run_training(const RunConfig& run, const RunOptions& options) {
    run.validate();
    if (run.train_manifests.empty()) throw ConfigError("data.train_manifests is empty");
    std::vector<data::SampleRecord> records;
    for (const auto& m : run.train_manifests) {
        auto recs = data::load_manifest(m);
        records.insert(records.end(), recs.begin(), recs.end());
    }
    data::MixedSampler sampler(data::group_by_dataset(records), run.train.batch_size, run.train.seed);
    Trainer trainer(run.model, run.train);

    fs::create_directories(options.run_dir);
    RunSummary summary;
    if (options.resume) {
        if (auto latest = latest_checkpoint(options.run_dir)) {
            auto meta = load_checkpoint(*latest, trainer);
            sampler.restore(meta.rng_state);
            summary.last_checkpoint = *latest;
            log::info("resumed from " + latest->string() + " at step " + std::to_string(meta.step));
        } else {
            log::warn("no checkpoint under " + options.run_dir.string() + "; starting from step 0");
        }
    }
    summary.first_step = trainer.step();

    std::ofstream log_file(options.run_dir / "train_log.txt", options.resume ? std::ios::app : std::ios::trunc);
    const auto pre = run.preprocess();
    int64_t end = run.train.total_steps;
    if (options.max_steps) end = std::min(end, trainer.step() + *options.max_steps);

    auto save = [&] {
        summary.last_checkpoint = checkpoint_path(options.run_dir, trainer.step());
        save_checkpoint(summary.last_checkpoint, trainer, run, sampler.state());
    };
    while (trainer.step() < end) {
        auto draw = sampler.next();
        Rng crops = crop_rng(run.train.seed, trainer.step());
        std::vector<data::Sample> samples;
        for (const auto& rec : draw.records) samples.push_back(data::load_sample(rec, data::LoadMode::train, pre, &crops));
        const auto result = trainer.train_step(data::assemble_batch(samples));
        log_file << format_log_line(result) << '\n';
        log_file.flush();
        if (options.on_step) options.on_step(result);
        summary.last_loss = result.loss;
        if (trainer.step() % run.train.checkpoint_every == 0) save();
    }
    if (summary.last_checkpoint != checkpoint_path(options.run_dir, trainer.step())) save();
    summary.last_step = trainer.step();
    return summary;
}

}  // namespace omnisal::train
