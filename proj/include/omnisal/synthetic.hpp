#pragma once

#include "omnisal/data.hpp"

namespace omnisal::data {

/// Toy saliency scenes: a textured background with one elliptical object.
/// Depth renders the object nearer (brighter), thermal renders it warmer.
struct SyntheticSpec {
    std::string dataset_id = "synthetic";
    Modality modality = Modality::rgb;
    int count = 8;
    int width = 80;
    int height = 60;
    bool depth16 = false;  // write depth as 16-bit PNG
};

/// Writes `<root>/<dataset_id>/{rgb,aux,gt}/NNNN.png` and returns the records.
std::vector<SampleRecord> write_synthetic_dataset(const fs::path& root, const SyntheticSpec& spec, uint64_t seed);

/// Writes records as a manifest, with paths relative to the manifest directory
/// when possible.
void write_manifest(const fs::path& path, const std::vector<SampleRecord>& records);

}  // namespace omnisal::data
