#include "omnisal/cli.hpp"

#include <cstdlib>
#include <ctime>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "json.hpp"
#include "omnisal/config.hpp"
#include "omnisal/cost.hpp"
#include "omnisal/log.hpp"
#include "omnisal/metrics.hpp"
#include "omnisal/training_run.hpp"

namespace omnisal::cli {

namespace fs = std::filesystem;

namespace {

// Failure with a one-line message and a specific exit code.
struct CommandError : std::runtime_error {
    int code;
    CommandError(int c, const std::string& message) : std::runtime_error(message), code(c) {}
};

struct Globals {
    std::optional<std::string> config;
    std::vector<std::string> sets;
    std::optional<uint64_t> seed;
    std::optional<std::string> out;

    bool overrides_config() const { return config || !sets.empty() || seed; }
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

void apply_overrides(RunConfig& rc, const Globals& g) {
    for (const auto& kv : g.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
        rc.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (g.seed) {
        rc.set("model.seed", std::to_string(*g.seed));
        rc.set("train.seed", std::to_string(*g.seed));
    }
}

RunConfig build_config(const Globals& g) {
    RunConfig rc;
    if (g.config) {
        if (!fs::exists(*g.config)) throw CommandError(kBadInput, "config file not found: " + *g.config);
        rc = RunConfig::load(*g.config);
    }
    apply_overrides(rc, g);
    rc.validate();
    return rc;
}

fs::path output_root(const Globals& g) {
    if (g.out) return *g.out;
    if (const char* env = std::getenv(kOutputEnv); env && *env) return env;
    return "runs";
}

fs::path make_run_dir(const Globals& g, const std::string& command, const RunConfig& rc) {
    const std::time_t now = std::time(nullptr);
    std::tm tm{};
    localtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y%m%d-%H%M%S", &tm);
    const fs::path root = output_root(g);
    fs::path dir = root / (command + "-" + stamp);
    for (int n = 2; fs::exists(dir); ++n) dir = root / (command + "-" + stamp + "-" + std::to_string(n));
    fs::create_directories(dir);
    std::ofstream(dir / "run_config.txt") << rc.serialize();
    return dir;
}

void require_file(const std::string& path, const std::string& what) {
    if (!fs::exists(path)) throw CommandError(kBadInput, what + " not found: " + path);
}

std::vector<data::SampleRecord> load_manifests(const std::vector<std::string>& paths) {
    std::vector<data::SampleRecord> all;
    for (const auto& p : paths) {
        require_file(p, "manifest");
        auto recs = data::load_manifest(p);
        all.insert(all.end(), recs.begin(), recs.end());
    }
    return all;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    f << text;
    if (!f) throw CommandError(kFailure, "cannot write " + path.string());
}

// ---- train ----

struct TrainArgs {
    std::optional<std::string> resume;
    std::optional<int64_t> steps;
    bool quiet = false;
};

int cmd_train(const Globals& g, const TrainArgs& a, std::ostream& out) {
    RunConfig rc;
    fs::path run_dir;
    if (a.resume) {
        if (g.overrides_config()) {
            throw CommandError(kBadInput, "--resume continues a run with its saved config; drop --config/--set/--seed");
        }
        run_dir = *a.resume;
        require_file((run_dir / "run_config.txt").string(), "run config");
        rc = RunConfig::load((run_dir / "run_config.txt").string());
        if (!train::latest_checkpoint(run_dir)) throw CommandError(kBadInput, "no checkpoint to resume in " + run_dir.string());
    } else {
        rc = build_config(g);
        if (rc.train_manifests.empty()) throw CommandError(kBadInput, "no training manifest (set data.train_manifests)");
        for (const auto& m : rc.train_manifests) require_file(m, "manifest");
        run_dir = make_run_dir(g, "train", rc);
    }
    out << "run_dir: " << run_dir.string() << "\n";
    train::RunOptions opts;
    opts.run_dir = run_dir;
    opts.resume = a.resume.has_value();
    opts.max_steps = a.steps;
    if (!a.quiet) opts.on_step = [&out](const train::StepResult& r) { out << train::format_log_line(r) << "\n"; };
    const auto summary = train::run_training(rc, opts);
    if (summary.last_step > summary.first_step) {
        out << "steps " << summary.first_step << ".." << summary.last_step << " final loss "
            << format_double(summary.last_loss) << "\n";
    } else {
        out << "already at step " << summary.last_step << " of " << rc.train.total_steps << "\n";
    }
    out << "checkpoint: " << summary.last_checkpoint.string() << "\n";
    return kOk;
}

// ---- eval / predict ----

std::unique_ptr<SaliencyModel> load_model(const Globals& g, const std::string& checkpoint, RunConfig& rc) {
    require_file(checkpoint, "checkpoint");
    const auto meta = train::read_checkpoint_meta(checkpoint);
    rc = g.overrides_config() ? build_config(g) : meta.run_config;
    auto model = std::make_unique<SaliencyModel>(rc.model);
    train::load_weights(checkpoint, *model);
    return model;
}

struct EvalArgs {
    std::string checkpoint;
    std::vector<std::string> manifests;
};

int cmd_eval(const Globals& g, const EvalArgs& a, std::ostream& out) {
    RunConfig rc;
    const auto model = load_model(g, a.checkpoint, rc);
    const auto manifests = a.manifests.empty() ? rc.eval_manifests : a.manifests;
    if (manifests.empty()) throw CommandError(kBadInput, "no evaluation manifest (use --manifest or data.eval_manifests)");
    const auto datasets = data::group_by_dataset(load_manifests(manifests));
    const fs::path run_dir = make_run_dir(g, "eval", rc);
    out << "run_dir: " << run_dir.string() << "\n";

    const auto pre = rc.preprocess();
    const int64_t batch = std::max<int64_t>(1, rc.eval_batch);
    fs::create_directories(run_dir / "reports");
    std::vector<eval::MetricsReport> reports;
    NoGradGuard guard;
    for (const auto& ds : datasets) {
        std::vector<eval::ImageScores> scores;
        for (size_t start = 0; start < ds.records.size(); start += static_cast<size_t>(batch)) {
            const size_t end = std::min(ds.records.size(), start + static_cast<size_t>(batch));
            std::vector<data::Sample> samples;
            for (size_t i = start; i < end; ++i) samples.push_back(data::load_sample(ds.records[i], data::LoadMode::eval, pre));
            const auto pb = data::assemble_batch(samples);
            const Tensor pred = model->predict(Var(pb.images), pb.modality).value();
            const int64_t s = pred.dim(2), hw = s * s;
            for (size_t i = start; i < end; ++i) {
                const auto& rec = ds.records[i];
                Tensor map({1, s, s});
                std::copy_n(pred.data() + static_cast<int64_t>(i - start) * hw, hw, map.data());
                // Scored at the annotation's own resolution, on the 8-bit values written to disk.
                const Tensor gt = data::read_image(rec.gt_path, true);
                Tensor full = data::resize_image(map, gt.dim(1), gt.dim(2));
                for (auto& v : full.values()) v = static_cast<double>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0;
                data::write_gray_png(run_dir / "predictions" / ds.id / (rec.rgb_path.stem().string() + ".png"), full);
                scores.push_back(eval::evaluate_pair({full, gt}));
            }
        }
        auto report = eval::aggregate(ds.id, scores);
        nlohmann::ordered_json j;
        j["dataset"] = report.dataset;
        j["modality"] = to_string(ds.modality);
        j["images"] = report.images;
        for (auto [key, v] : {std::pair{"s_measure", report.s_measure}, {"max_f", report.max_f},
                              {"e_measure", report.e_measure}, {"mae", report.mae}}) {
            if (v) j[key] = *v;
            else j[key] = nullptr;
        }
        write_text(run_dir / "reports" / (ds.id + ".json"), j.dump(2) + "\n");
        reports.push_back(report);
    }
    const auto table = eval::benchmark_table(reports);
    write_text(run_dir / "benchmark_report.txt", table);
    write_text(run_dir / "benchmark_report.csv", eval::benchmark_csv(reports));
    out << table;
    return kOk;
}

struct PredictArgs {
    std::string checkpoint;
    std::string rgb;
    std::optional<std::string> aux;
    std::string modality = "rgbd";
    std::optional<std::string> output;
};

int cmd_predict(const Globals& g, const PredictArgs& a, std::ostream& out) {
    RunConfig rc;
    const auto model = load_model(g, a.checkpoint, rc);
    require_file(a.rgb, "rgb image");
    if (a.aux) require_file(*a.aux, "aux image");
    const Modality modality = a.aux ? parse_modality(a.modality) : Modality::rgb;
    if (a.aux && modality == Modality::rgb) throw CommandError(kBadInput, "--aux given with --modality rgb");

    const auto pre = rc.preprocess();
    const int64_t s = pre.input_size;
    Tensor rgb = data::to_three_channels(data::read_image(a.rgb, false));
    Tensor aux = rgb;
    if (a.aux) {
        aux = data::to_three_channels(data::read_image(*a.aux, true));
        if (aux.dim(1) != rgb.dim(1) || aux.dim(2) != rgb.dim(2)) {
            log::warn("aux image is " + std::to_string(aux.dim(2)) + "x" + std::to_string(aux.dim(1)) +
                      ", rgb is " + std::to_string(rgb.dim(2)) + "x" + std::to_string(rgb.dim(1)) + "; resizing aux");
            aux = data::resize_image(aux, rgb.dim(1), rgb.dim(2));
        }
    }
    rgb = data::resize_image(rgb, s, s);
    aux = a.aux ? data::resize_image(aux, s, s) : rgb;
    data::normalize_image(rgb, pre);
    if (a.aux) data::normalize_image(aux, pre);
    else aux = rgb;

    Tensor images({2, 3, s, s});
    std::copy_n(rgb.data(), rgb.numel(), images.data());
    std::copy_n(aux.data(), aux.numel(), images.data() + rgb.numel());
    NoGradGuard guard;
    const Tensor pred = model->predict(Var(images), modality).value();

    fs::path target;
    if (a.output) {
        target = *a.output;
    } else {
        const fs::path run_dir = make_run_dir(g, "predict", rc);
        out << "run_dir: " << run_dir.string() << "\n";
        target = run_dir / (fs::path(a.rgb).stem().string() + ".png");
    }
    data::write_gray_png(target, pred);
    out << "modality " << to_string(modality) << (modality == Modality::rgb ? " (fast path)" : "") << "\n";
    out << "prediction: " << target.string() << "\n";
    return kOk;
}

// ---- bench / norm-demo ----

int cmd_bench(const Globals& g, bool fps, std::ostream& out) {
    const RunConfig rc = build_config(g);
    const fs::path run_dir = make_run_dir(g, "bench", rc);
    out << "run_dir: " << run_dir.string() << "\n";
    const SaliencyModel model(rc.model);
    const auto report = eval::cost_report(model, fps, rc.bench_batch, rc.bench_warmup, rc.bench_iters);
    write_text(run_dir / "cost.json", eval::cost_json(report));
    out << eval::cost_text(report);
    return kOk;
}

int cmd_norm_demo(const Globals& g, std::ostream& out) {
    const RunConfig rc = build_config(g);
    if (rc.demo_rows < 1 || rc.demo_channels < 1 || rc.demo_trials < 1) {
        throw ConfigError("demo.rows, demo.channels and demo.trials must be positive");
    }
    const fs::path run_dir = make_run_dir(g, "norm-demo", rc);
    out << "run_dir: " << run_dir.string() << "\n";

    Rng rng(rc.model.seed);
    auto block = [&](double mean, double spread) {
        Tensor t({rc.demo_rows, rc.demo_channels});
        for (auto& v : t.values()) v = mean + spread * rng.normal();
        return t;
    };
    std::string csv = "trial,layer,batch,layer_identical_aux,batch_identical_aux\n";
    struct Row {
        double max = 0, sum = 0, identical = 0;
    } ln, bn;
    for (int64_t t = 0; t < rc.demo_trials; ++t) {
        const Tensor rgb = block(0.0, 1.0);
        // Auxiliary blocks come from a shifted, wider distribution, as a second modality would.
        const Tensor aux_a = block(rng.uniform(-2, 2), rng.uniform(0.5, 3));
        const Tensor aux_b = block(rng.uniform(-2, 2), rng.uniform(0.5, 3));
        const double l = core::interference_metric(NormKind::layer, rgb, aux_a, aux_b);
        const double b = core::interference_metric(NormKind::batch, rgb, aux_a, aux_b);
        const double li = core::interference_metric(NormKind::layer, rgb, aux_a, aux_a);
        const double bi = core::interference_metric(NormKind::batch, rgb, aux_a, aux_a);
        csv += std::to_string(t) + "," + format_double(l) + "," + format_double(b) + "," + format_double(li) + "," +
               format_double(bi) + "\n";
        ln = {std::max(ln.max, l), ln.sum + l, std::max(ln.identical, li)};
        bn = {std::max(bn.max, b), bn.sum + b, std::max(bn.identical, bi)};
    }
    write_text(run_dir / "norm_demo.csv", csv);
    const double n = static_cast<double>(rc.demo_trials);
    char line[200];
    out << "norm       max_interference  mean_interference  identical_aux_max\n";
    std::snprintf(line, sizeof(line), "LayerNorm  %-16.6g  %-17.6g  %.6g\n", ln.max, ln.sum / n, ln.identical);
    out << line;
    std::snprintf(line, sizeof(line), "BatchNorm  %-16.6g  %-17.6g  %.6g\n", bn.max, bn.sum / n, bn.identical);
    out << line;
    out << "csv: " << (run_dir / "norm_demo.csv").string() << "\n";
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Salient object detection for RGB, RGB-D and RGB-T images", "omnisal"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config, "run config file (key = value lines)");
    app.add_option("--set", g.sets, "override one config key, key=value (repeatable)");
    app.add_option("--seed", g.seed, "sets model.seed and train.seed");
    app.add_option("--out", g.out, std::string("output root (default $") + kOutputEnv + " or ./runs)");

    TrainArgs ta;
    auto* train = app.add_subcommand("train", "train on data.train_manifests");
    train->add_option("--resume", ta.resume, "continue the run in this directory from its latest checkpoint");
    train->add_option("--steps", ta.steps, "stop after this many steps in this invocation");
    train->add_flag("--quiet", ta.quiet, "do not echo loss lines");

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "write predictions and benchmark reports");
    ev->add_option("--checkpoint", ea.checkpoint, "checkpoint file")->required();
    ev->add_option("--manifest", ea.manifests, "evaluation manifest (repeatable; default data.eval_manifests)");

    PredictArgs pa;
    auto* pr = app.add_subcommand("predict", "saliency map for one image");
    pr->add_option("--checkpoint", pa.checkpoint, "checkpoint file")->required();
    pr->add_option("--rgb", pa.rgb, "RGB image")->required();
    pr->add_option("--aux", pa.aux, "depth or thermal image; omit for RGB-only inference");
    pr->add_option("--modality", pa.modality, "rgbd or rgbt when --aux is given")->capture_default_str();
    pr->add_option("--output", pa.output, "output PNG (default: inside a new run directory)");

    bool fps = false;
    auto* bench = app.add_subcommand("bench", "parameter, FLOPs and optional speed report");
    bench->add_flag("--fps", fps, "also time forward passes (bench.batch, bench.warmup, bench.iters)");

    auto* demo = app.add_subcommand("norm-demo", "LayerNorm vs BatchNorm cross-modal interference");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kBadInput;
    }

    try {
        if (train->parsed()) return cmd_train(g, ta, out);
        if (ev->parsed()) return cmd_eval(g, ea, out);
        if (pr->parsed()) return cmd_predict(g, pa, out);
        if (bench->parsed()) return cmd_bench(g, fps, out);
        if (demo->parsed()) return cmd_norm_demo(g, out);
    } catch (const CommandError& e) {
        err << "error: " << e.what() << "\n";
        return e.code;
    } catch (const ConfigError& e) {
        err << "error: config: " << e.what() << "\n";
        return kBadInput;
    } catch (const data::DataError& e) {
        err << "error: " << e.what() << "\n";
        return kBadInput;
    } catch (const train::CheckpointError& e) {
        err << "error: checkpoint: " << e.what() << "\n";
        return kBadInput;
    } catch (const train::NonFiniteLoss& e) {
        err << "error: " << e.what() << "\n";
        return kNonFinite;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kFailure;
    }
    return kBadInput;
}

}  // namespace omnisal::cli
