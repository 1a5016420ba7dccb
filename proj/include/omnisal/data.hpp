#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "omnisal/modality.hpp"
#include "omnisal/rng.hpp"
#include "omnisal/tensor.hpp"

namespace omnisal::data {

namespace fs = std::filesystem;

/// Malformed manifests, unreadable images and similar input problems.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SampleRecord {
    std::string dataset_id;
    Modality modality = Modality::rgb;
    fs::path rgb_path;
    std::optional<fs::path> aux_path;
    fs::path gt_path;

    /// `<dataset_id>/<rgb file stem>`, unique within a manifest.
    std::string id() const;
};

/// Tab-separated `dataset_id modality rgb_path aux_path|- gt_path` records.
/// Relative paths resolve against the manifest's directory; blank lines and
/// lines starting with '#' are skipped.
std::vector<SampleRecord> load_manifest(const fs::path& path);

std::string format_manifest_line(const SampleRecord& rec);

struct Preprocess {
    int64_t input_size = 224;
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> std{0.229, 0.224, 0.225};

    /// Side of the square resize before a training crop (256 at input 224).
    int64_t train_resize() const;
};

enum class LoadMode { train, eval };

struct Sample {
    std::string id;
    Modality modality = Modality::rgb;
    Tensor rgb;  // (3, S, S), normalized
    Tensor aux;  // (3, S, S), normalized; equals rgb for RGB samples
    Tensor gt;   // (1, S, S) in [0, 1]
};

/// Train mode resizes to train_resize() and takes one random S×S crop shared
/// by rgb, aux and gt; eval mode resizes straight to S×S and ignores `rng`.
Sample load_sample(const SampleRecord& rec, LoadMode mode, const Preprocess& pre, Rng* rng = nullptr);

/// Image as (C, H, W) doubles in [0, 1]: 8-bit data is divided by 255, 16-bit
/// by 65535. Colour images come back in RGB order.
Tensor read_image(const fs::path& path, bool grayscale);
/// Writes a (1, H, W) or (H, W) map in [0, 1] as an 8-bit grayscale PNG.
void write_gray_png(const fs::path& path, const Tensor& map);
/// Grayscale (1, H, W) images are replicated to three channels.
Tensor to_three_channels(const Tensor& chw);
/// In-place (x - mean) / std per channel of a (3, H, W) image.
void normalize_image(Tensor& chw, const Preprocess& pre);
/// Bilinear resize of a (C, H, W) image.
Tensor resize_image(const Tensor& chw, int64_t height, int64_t width);

struct PairedBatch {
    Tensor images;  // (2B, 3, S, S): RGB rows then aux rows in the same order
    Tensor gts;     // (B, 1, S, S)
    Modality modality = Modality::rgb;
    std::vector<std::string> sample_ids;

    int64_t size() const { return gts.empty() ? 0 : gts.dim(0); }
};

PairedBatch assemble_batch(const std::vector<Sample>& samples);

/// One dataset's records, all of a single modality.
struct Dataset {
    std::string id;
    Modality modality = Modality::rgb;
    std::vector<SampleRecord> records;
};

/// Groups records by dataset_id in first-appearance order; a dataset mixing
/// modalities is rejected.
std::vector<Dataset> group_by_dataset(const std::vector<SampleRecord>& records);

/// Endless stream of modality-homogeneous batches. Each step picks a dataset
/// with probability proportional to its size, then takes the next B records
/// of that dataset's current epoch permutation (reshuffled when exhausted).
class MixedSampler {
public:
    MixedSampler(std::vector<Dataset> datasets, int64_t batch_size, uint64_t seed);

    struct Draw {
        size_t dataset = 0;
        std::vector<SampleRecord> records;
    };
    Draw next();

    const std::vector<Dataset>& datasets() const noexcept { return datasets_; }

    /// Text snapshot of the generator, permutations and cursors.
    std::string state() const;
    /// Throws DataError when the snapshot does not fit these datasets.
    void restore(const std::string& state);

private:
    void reshuffle(size_t d);

    std::vector<Dataset> datasets_;
    int64_t batch_size_;
    Rng rng_;
    int64_t total_ = 0;
    std::vector<std::vector<size_t>> order_;
    std::vector<size_t> cursor_;
};

}  // namespace omnisal::data
