#pragma once
// One function per pipeline step, shared by the CLI and the HTTP service so
// both front ends produce the same artifacts from the same inputs.

#include "svseg/evalharness.hpp"
#include "svseg/workbench/config.hpp"
#include "svseg/workbench/dataset.hpp"

namespace svseg {

/// Applies {"key": value} pairs to a copy of `base` via WorkbenchConfig::set.
/// Strings are used verbatim, numbers and booleans in their JSON spelling.
WorkbenchConfig config_with_overrides(const WorkbenchConfig& base, const nlohmann::json& overrides);

/// Supervoxels and features from the config's SLIC and feature settings.
/// A project whose segmentation parameters were never customized picks up
/// the config's segmentation defaults, converted for the new supervoxels.
nlohmann::json preprocess_step(Project& project, const WorkbenchConfig& config, const ProgressFn& progress = {});

/// Trains on the project's stroke log.
nlohmann::json train_step(Project& project, const WorkbenchConfig& config, const ProgressFn& progress = {});

nlohmann::json predict_step(Project& project, const ProgressFn& progress = {});

/// Segments with the project's stored parameters overridden by `overrides`
/// (SegmentationParams keys in voxels).
nlohmann::json segment_step(Project& project, const nlohmann::json& overrides, const ProgressFn& progress = {});

/// Clusters the dataset, stores the manifest and opens one project per
/// prototype (reusing projects that already exist).
nlohmann::json cluster_step(DatasetStore& datasets, ProjectStore& projects, const std::string& dataset_id,
                            const WorkbenchConfig& config, const ProgressFn& progress = {});

std::vector<ElbowPoint> elbow_step(const DatasetStore& datasets, const std::string& dataset_id,
                                   const WorkbenchConfig& config, int k_min, int k_max);

struct ReuseRequest {
    ReuseMode mode = ReuseMode::intra;
    /// Prototype image id -> model. Filled from the prototype projects when empty.
    std::map<std::string, TrainedModel> models;
    nlohmann::json segmentation = nlohmann::json::object();  // overrides over the config defaults
    /// Directory with <image id>_gold.csv files; enables the evaluation summary.
    std::optional<std::filesystem::path> gold_dir;
};

/// Runs guided_reuse and writes one label image per result into
/// `out_dir`/<image>__<model source>.png (.tif for volumes), colorized.
nlohmann::json reuse_step(const ClusterManifest& manifest, const ReuseRequest& request, const WorkbenchConfig& config,
                          const std::filesystem::path& out_dir);

/// Prototype models of a dataset, from its prototype projects. Throws
/// PreconditionError naming the first prototype without a trained model.
std::map<std::string, TrainedModel> prototype_models(const DatasetStore& datasets, ProjectStore& projects,
                                                     const std::string& dataset_id);

/// File name of a label image written for `dims`.
std::string label_file_name(const std::string& stem, const Dims& dims);

/// Match report as JSON.
nlohmann::json report_to_json(const MatchReport& r);

}  // namespace svseg
