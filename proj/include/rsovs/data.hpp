#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "rsovs/core.hpp"
#include "rsovs/image_io.hpp"

namespace rsovs {

/// Ordered category names; position is the class index everywhere downstream.
struct CategoryRegistry {
    std::string dataset_id;
    std::vector<std::string> names;

    /// Rejects empty and duplicate names.
    void validate() const;
    int64_t size() const { return static_cast<int64_t>(names.size()); }
    int64_t index_of(const std::string& name) const;
};

/// Category lists of the four public remote sensing benchmarks: "isaid",
/// "dlrsd", "potsdam", "vaihingen".
CategoryRegistry builtin_registry(const std::string& dataset_id);

enum class Split { Train, Val };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct Sample {
    std::string id;
    std::filesystem::path image;  // absolute or relative to the manifest directory
    std::filesystem::path mask;
    Split split = Split::Train;
};

struct Manifest {
    CategoryRegistry registry;
    std::vector<Sample> samples;
    int32_t ignore_index = kIgnoreIndex;
    std::filesystem::path root;  // directory that relative sample paths resolve against

    std::vector<Sample> split(Split s) const;
};

/// Parses and validates a manifest: schema, unique category names, existing
/// sample files, at least one sample.
Manifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const Manifest& manifest);

struct LoadedSample {
    std::string id;
    ImageGrid image;
    LabelMask mask;
};

/// Reads an image/mask pair. The image is bilinearly resized to side x side and
/// scaled to [0, 1]; the mask is resized nearest-neighbour and every value must
/// be a registry index or the ignore index.
LoadedSample load_sample(const Manifest& manifest, const Sample& sample, int64_t image_side);

struct SynthConfig {
    int64_t num_images = 16;
    int64_t image_side = 384;
    int64_t num_categories = 4;  // background included; at most 8
    int64_t min_shapes = 2;
    int64_t max_shapes = 5;
    double scale_min = 0.15;  // longest shape extent as a fraction of the side
    double scale_max = 0.5;
    bool orientation_jitter = true;
    uint64_t seed = 0;
    double val_fraction = 0.25;
    /// Write the val split as quarter-turn rotated copies of the train images.
    bool val_rotated_copy = false;

    void validate() const;
};

enum class ShapeKind { Bar, Rectangle, Ellipse };

struct ShapeRecord {
    ShapeKind kind = ShapeKind::Bar;
    int32_t category = 0;
    double center_x = 0, center_y = 0;
    double length = 0, width = 0;  // full extents along and across the main axis
    double angle = 0;              // radians, counter-clockwise from the x axis
};

struct SynthScene {
    Tensor<uint8_t> rgb;  // [side, side, 3]
    Tensor<uint8_t> mask;  // [side, side]
    std::vector<ShapeRecord> shapes;
};

/// Category names used by the generator; index 0 is "background".
std::vector<std::string> synth_category_names(int64_t num_categories);

/// Renders scene `index` of the dataset described by `cfg`; a pure function of
/// (cfg, index).
SynthScene synth_render(const SynthConfig& cfg, int64_t index);

struct SynthSummary {
    Manifest manifest;
    std::vector<int64_t> histogram;  // mask pixels per category over all written masks
};

/// Writes images/, masks/ and manifest.json under `out_dir`.
SynthSummary synth_generate(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace rsovs
