#pragma once
// Dataset-level workflow: cluster images by dominant colors, pick
// prototypes, and reuse prototype-trained models on the other images.

#include "svseg/palette.hpp"
#include "svseg/workbench/project.hpp"

namespace svseg {

struct DatasetImage {
    std::string id;
    std::string path;
};

/// Image ids default to the file stem; duplicate ids are an error.
std::vector<DatasetImage> dataset_images(const std::vector<std::filesystem::path>& paths);

/// Dominant colors of every image, computed in parallel.
std::vector<DominantColorVector> dataset_palettes(const std::vector<DatasetImage>& images, const PaletteParams& params,
                                                  std::uint64_t seed, Layout layout = Layout::single_image);

ClusterManifest cluster_dataset(const std::vector<DatasetImage>& images, const PaletteParams& params, int k_i,
                                std::uint64_t seed, Layout layout = Layout::single_image);

// ---------------------------------------------------------------------------
// Guided reuse
// ---------------------------------------------------------------------------

enum class ReuseMode { intra, inter };

std::string to_string(ReuseMode m);
ReuseMode parse_reuse_mode(std::string_view s);

struct ReuseAssignment {
    std::size_t image = 0;      // manifest index of the target image
    std::size_t prototype = 0;  // manifest index of the model's prototype
};

/// Intra: every non-prototype member gets its own cluster's prototype model.
/// Inter: every image gets the prototype models of all other clusters.
/// Ordered by image, then by prototype manifest index.
std::vector<ReuseAssignment> plan_reuse(const ClusterManifest& manifest, ReuseMode mode);

struct PreparedImage {
    Oversegmentation seg;
    FeatureMatrix features;
};

/// Produces supervoxels and features for a manifest entry.
using PrepareFn = std::function<PreparedImage(const ManifestEntry& entry, const FeatureConfig& config)>;
using SegmentationParamsFn = std::function<SegmentationParams(const Oversegmentation& seg)>;

struct ReuseResult {
    std::string image_id;
    int cluster = 0;
    std::string model_source;  // prototype image id
    int model_cluster = 0;
    ProbabilityMap probability;
    LabelImage labels;
};

/// Applies prototype models (keyed by prototype image id) according to the
/// plan, in parallel across images. Every prototype in the manifest needs a
/// model (PreconditionError otherwise); a layout mismatch between a model and
/// the prepared features raises LayoutMismatchError.
std::vector<ReuseResult> guided_reuse(const ClusterManifest& manifest, const std::map<std::string, TrainedModel>& models,
                                      ReuseMode mode, const PrepareFn& prepare,
                                      const SegmentationParamsFn& segmentation_params);

/// Loads the image and runs SLIC plus feature extraction.
PrepareFn preprocessing_from_disk(const SlicParams& slic, std::uint64_t seed, Layout layout = Layout::single_image);

// ---------------------------------------------------------------------------
// Dataset store
// ---------------------------------------------------------------------------

struct DatasetState {
    std::string id;
    std::vector<DatasetImage> images;
    std::optional<std::string> manifest;  // file name in the dataset directory
    std::map<int, std::string> prototype_projects;  // cluster -> project id
    std::string created_at;

    nlohmann::json to_json() const;
    static DatasetState from_json(const nlohmann::json& j);
};

/// <root>/datasets/<id>/dataset.json plus manifest.json.
class DatasetStore {
public:
    explicit DatasetStore(std::filesystem::path root);

    DatasetState create(const std::string& id, const std::vector<std::filesystem::path>& images);
    DatasetState get(const std::string& id) const;
    std::vector<std::string> list() const;
    void save(const DatasetState& state);
    std::filesystem::path dir(const std::string& id) const { return root_ / "datasets" / id; }
    /// Throws PreconditionError("cluster required") before clustering.
    ClusterManifest manifest(const std::string& id) const;
    void save_manifest(const std::string& id, const ClusterManifest& m);

private:
    std::filesystem::path root_;
    mutable std::mutex mu_;
};

}  // namespace svseg
