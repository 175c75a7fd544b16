#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "tuna/ops.hpp"

namespace tuna {

struct SampleRecord {
    Tensor image;  // [3,H,W], values in [0,1]
    IntGrid mask;  // class ids, or ignore_index
    std::string id;
};

struct Dataset {
    std::vector<SampleRecord> samples;

    size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }
};

// Binary PPM (P6) images and PGM (P5) masks.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);
std::array<int64_t, 2> read_pnm_size(const std::filesystem::path& path);  // {h, w}
void write_pgm(const std::filesystem::path& path, const IntGrid& mask);
IntGrid read_pgm(const std::filesystem::path& path);

struct LoadReport {
    size_t loaded = 0;
    std::vector<std::string> warnings;  // skipped samples, one message each
};

// Loads `<id>.img.ppm` / `<id>.mask.pgm` pairs from a directory. Samples
// with mismatched sizes or out-of-range class ids are skipped with a
// warning; unreadable files raise IoError.
Dataset load_dataset(const std::filesystem::path& dir, int64_t num_classes, int32_t ignore_index,
                     LoadReport* report = nullptr);

void save_dataset(const Dataset& data, const std::filesystem::path& dir);

struct SynthSpec {
    int64_t num_images = 16;
    int64_t size = 32;
    int64_t num_classes = 3;
    double noise_sigma = 0.1;
};

// Background class 0 plus random rectangles and ellipses of classes 1..K-1.
// Each class owns two base colors (chosen per shape); colors of different
// classes interleave on the hue circle so the task needs more than a linear
// classifier, while any class is separable from the gray background.
Dataset generate_synthetic(const SynthSpec& spec, Rng& rng);

// Base color of a class (variant 0 or 1); class 0 is the background gray.
std::array<double, 3> class_color(int64_t cls, int64_t variant, int64_t num_classes);

// Plain (untaped) resize helpers for batch assembly.
Tensor resize_image_bilinear(const Tensor& image, int64_t out_h, int64_t out_w);
IntGrid resize_mask_nearest(const IntGrid& mask, int64_t out_h, int64_t out_w);

struct Batch {
    Tensor images;  // [B,3,crop,crop]
    std::vector<IntGrid> masks;
};

// Aspect-preserving resize into a crop x crop canvas; the image is padded
// with zeros, the mask with ignore_index.
Batch assemble_batch(const std::vector<const SampleRecord*>& samples, int64_t crop,
                     int32_t ignore_index);

}  // namespace tuna
