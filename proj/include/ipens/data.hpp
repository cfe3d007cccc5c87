#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ipens/tensor.hpp"

namespace ipens::data {

struct Sample {
    std::string path;
    std::string label;
    std::string patient_id;
    std::string split;  // "", "train", "val", "test"
    std::string mask;   // optional mask image path
    std::size_t line = 0;
    bool operator==(const Sample& o) const {
        return path == o.path && label == o.label && patient_id == o.patient_id && split == o.split && mask == o.mask;
    }
};

// Samples plus the ordered label vocabulary (class index = position).
// Relative paths resolve against `base_dir`.
struct DatasetManifest {
    std::vector<Sample> samples;
    std::vector<std::string> labels;
    std::string provenance;
    std::filesystem::path base_dir;

    std::filesystem::path resolve(const std::string& p) const;
    int label_index(const std::string& label) const;
    std::vector<int> label_indices() const;
    // Samples whose split tag equals `split`.
    DatasetManifest subset(const std::string& split) const;
    bool has_splits() const;
};

// Manifest text format:
//   # labels: normal,bacterial,covid     (optional; fixes class order)
//   # provenance: free text              (optional)
//   path,label,patient_id[,split][,mask]
//   images/a.pgm,normal,p001,train,masks/a.pgm
// Without a labels line the vocabulary is the sorted set of labels seen.
DatasetManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir = {});
DatasetManifest load_manifest(const std::filesystem::path& path);
std::string format_manifest(const DatasetManifest& manifest);
// Writes paths relative to the new file's directory.
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

// ---- images ----

struct GrayImage {
    Tensor pixels;  // H×W×1 raw values in [0, max_value]
    int max_value = 255;
};

GrayImage read_pgm(const std::filesystem::path& path);
// Values are rounded and clamped to [0, 255].
void write_pgm(const std::filesystem::path& path, const Tensor& image);
// H×W×3 in [0, 1], written as 8-bit.
void write_ppm(const std::filesystem::path& path, const Tensor& rgb);

// ---- preprocessing ----

struct PreprocessOptions {
    std::size_t target_height = 256;
    std::size_t target_width = 256;
    double raw_max = 255.0;
};

struct PreprocessResult {
    Tensor image;                // target_height × target_width × 1
    bool constant_image = false; // std < 1e-8; divided by 1 instead
};

Tensor crop_to_mask(const Tensor& image, const Tensor& mask);
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);
Tensor median_filter3x3(const Tensor& image);
// Crop to mask box, resize, rescale to [0,1], 3×3 median, per-image standardization.
PreprocessResult preprocess(const Tensor& image, const std::optional<Tensor>& mask, const PreprocessOptions& options);

// ---- in-memory datasets ----

struct Dataset {
    Tensor images;                 // N×H×W×1
    std::vector<int> labels;
    std::vector<std::string> ids;  // sample paths as written in the manifest
    std::vector<std::string> vocabulary;
    std::size_t constant_images = 0;

    std::size_t size() const { return labels.size(); }
};

Dataset load_dataset(const DatasetManifest& manifest, const PreprocessOptions& options);

// ---- synthetic data ----

struct SynthConfig {
    std::size_t classes = 3;
    std::size_t patients_per_class = 20;
    std::size_t samples_per_patient = 5;
    std::size_t image_size = 64;
    std::uint64_t seed = 0;
};

// Writes images/, masks/ and manifest.csv under `out_dir`.
DatasetManifest synth_dataset(const SynthConfig& config, const std::filesystem::path& out_dir);

std::vector<std::string> default_class_names(std::size_t classes);

}  // namespace ipens::data
