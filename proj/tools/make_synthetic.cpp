// Writes small synthetic RGB, RGB-D and RGB-T datasets plus train/eval manifests.
#include <iostream>

#include "CLI11.hpp"
#include "omnisal/synthetic.hpp"

using namespace omnisal;

int main(int argc, char** argv) {
    CLI::App app{"Generate toy saliency datasets", "make_synthetic"};
    std::string root = "synthetic";
    int train_count = 8, eval_count = 4, width = 80, height = 60;
    uint64_t seed = 0;
    app.add_option("--root", root, "output directory")->capture_default_str();
    app.add_option("--train", train_count, "training images per modality")->capture_default_str();
    app.add_option("--eval", eval_count, "evaluation images per modality")->capture_default_str();
    app.add_option("--width", width)->capture_default_str();
    app.add_option("--height", height)->capture_default_str();
    app.add_option("--seed", seed)->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    try {
        const data::fs::path base(root);
        std::vector<data::SampleRecord> train, eval;
        uint64_t s = seed;
        for (Modality m : {Modality::rgb, Modality::rgbd, Modality::rgbt}) {
            const std::string name = to_string(m);
            auto tr = data::write_synthetic_dataset(base, {"train-" + name, m, train_count, width, height, m == Modality::rgbd}, s++);
            auto ev = data::write_synthetic_dataset(base, {"eval-" + name, m, eval_count, width, height, m == Modality::rgbd}, s++);
            train.insert(train.end(), tr.begin(), tr.end());
            eval.insert(eval.end(), ev.begin(), ev.end());
        }
        data::write_manifest(base / "train.tsv", train);
        data::write_manifest(base / "eval.tsv", eval);
        std::cout << (base / "train.tsv").string() << "\n" << (base / "eval.tsv").string() << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
