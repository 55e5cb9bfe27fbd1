#pragma once
// Flat key = value defaults shared by the CLI and the HTTP service.

#include "svseg/features.hpp"
#include "svseg/learn/model.hpp"
#include "svseg/palette.hpp"
#include "svseg/segment.hpp"
#include "svseg/supervoxel.hpp"

#include <filesystem>
#include <string>

namespace svseg {

struct WorkbenchConfig {
    // preprocessing
    int target_size = 64;
    int slic_iterations = 10;
    std::string features = "all";
    std::uint64_t slic_seed = 0;
    // training
    std::string classifier = "rf";
    bool optimize = false;
    std::string calibration = "none";
    int n_trees = 200;
    int search_iterations = 25;
    std::uint64_t train_seed = 0;
    // segmentation
    double threshold = 0.5;
    double min_object_supervoxels = 0;
    double max_hole_supervoxels = 0;
    int smooth_radius = 0;
    bool watershed = false;
    double watershed_h = 1.0;
    // dataset clustering
    int k_c = 4;
    int k_i = 6;
    std::string color_sort = "per_channel";
    std::uint64_t cluster_seed = 0;

    /// Lines "key = value"; '#' starts a comment. Unknown keys and malformed
    /// values throw FormatError naming the line.
    static WorkbenchConfig parse(const std::string& text);
    static WorkbenchConfig load(const std::filesystem::path& path);
    std::string format() const;

    /// Applies one key = value pair.
    void set(const std::string& key, const std::string& value);

    SlicParams slic_params() const;
    FeatureConfig feature_config() const;
    ClassifierSpec classifier_spec() const;
    /// Supervoxel-count filters converted to voxels for `seg`.
    SegmentationParams segmentation_params(const Oversegmentation& seg) const;
    PaletteParams palette_params() const;
};

/// SVSEG_CONFIG if set, else <root>/svseg.conf if present, else defaults.
WorkbenchConfig load_default_config(const std::filesystem::path& root);

}  // namespace svseg
