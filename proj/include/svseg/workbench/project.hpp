#pragma once
// Per-image project directories: a JSON manifest, generation-numbered
// artifact caches and a durable stroke log. The manifest is the commit
// point, so an interrupted step leaves the previous state intact.

#include "svseg/features.hpp"
#include "svseg/learn/model.hpp"
#include "svseg/segment.hpp"
#include "svseg/supervoxel.hpp"

#include "json.hpp"

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace svseg {

/// Unknown project, dataset or job id.
class NotFoundError : public Error {
public:
    using Error::Error;
};

/// The resource is busy or already exists.
class ConflictError : public Error {
public:
    using Error::Error;
};

using ProgressFn = std::function<void(double)>;

/// Throws PreconditionError unless id matches [A-Za-z0-9_-]{1,64}.
void validate_id(const std::string& id, const char* what);

nlohmann::json stroke_to_json(const AnnotationStroke& s);
AnnotationStroke stroke_from_json(const nlohmann::json& j);
/// {"format": "svseg-strokes", "version": 1, "strokes": [...]}; a bare
/// array of strokes is accepted on input.
std::string format_strokes(const std::vector<AnnotationStroke>& strokes);
std::vector<AnnotationStroke> parse_strokes(const std::string& text);

nlohmann::json segmentation_params_to_json(const SegmentationParams& p);
/// Missing keys keep the values of `base`.
SegmentationParams segmentation_params_from_json(const nlohmann::json& j, const SegmentationParams& base = {});

std::string utc_timestamp();

struct ProjectState {
    std::string id;
    std::string image;  // absolute path
    Layout layout = Layout::single_image;
    Dims dims;
    int generation = 0;

    // Artifact file names inside the project directory, absent until built.
    std::optional<std::string> supervoxels, features, model, probability, segmentation;

    int target_size = 0;
    int slic_iterations = 0;
    std::uint64_t slic_seed = 0;
    std::string feature_config;  // canonical
    std::size_t supervoxel_count = 0;
    std::size_t stroke_count = 0;
    SegmentationParams segmentation_params;

    std::string created_at, preprocessed_at, trained_at, predicted_at, segmented_at;

    nlohmann::json to_json() const;
    static ProjectState from_json(const nlohmann::json& j);
};

class Project {
public:
    /// Creates <dir> with a manifest. Throws ConflictError if a manifest
    /// already exists there.
    static std::shared_ptr<Project> create(const std::filesystem::path& dir, const std::string& id,
                                           const std::filesystem::path& image, Layout layout = Layout::single_image);
    /// Throws NotFoundError when <dir> has no manifest.
    static std::shared_ptr<Project> open(const std::filesystem::path& dir);

    const std::filesystem::path& dir() const { return dir_; }
    ProjectState state() const;
    std::string id() const { return state().id; }

    RasterVolume load_image() const;
    /// Each loader throws PreconditionError naming the missing step.
    Oversegmentation load_supervoxels() const;
    FeatureMatrix load_features() const;
    TrainedModel load_model() const;
    ProbabilityMap load_probability() const;
    LabelImage load_segmentation() const;
    std::vector<AnnotationStroke> strokes() const;

    /// Preconditions checked without doing the work; throw PreconditionError.
    void require_preprocessed() const;
    void require_trainable() const;
    void require_model() const;
    void require_probability() const;

    void preprocess(const SlicParams& slic, const FeatureConfig& features, std::uint64_t seed,
                    const ProgressFn& progress = {});

    /// Validates the stroke against the image bounds; returns the new count.
    std::size_t add_stroke(const AnnotationStroke& stroke);
    /// Removes and returns the last stroke; throws PreconditionError if empty.
    AnnotationStroke undo_stroke();
    void replace_strokes(const std::vector<AnnotationStroke>& strokes);

    TrainedModel train(const ClassifierSpec& spec, const ProgressFn& progress = {});
    /// Throws LayoutMismatchError if the project has features of another layout.
    void import_model(const TrainedModel& model);
    ProbabilityMap predict(const ProgressFn& progress = {});
    LabelImage segment(const SegmentationParams& params, const ProgressFn& progress = {});
    void set_segmentation_params(const SegmentationParams& params);

    std::filesystem::path artifact_path(const std::optional<std::string>& name, const char* step) const;

private:
    Project(std::filesystem::path dir, ProjectState state) : dir_(std::move(dir)), state_(std::move(state)) {}
    void commit(const std::function<void(ProjectState&)>& change);
    std::string next_name(const std::string& stem, const std::string& ext);

    std::filesystem::path dir_;
    mutable std::mutex mu_;
    ProjectState state_;
};

/// Directory of projects: <root>/projects/<id>/.
class ProjectStore {
public:
    explicit ProjectStore(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }
    std::shared_ptr<Project> create(const std::string& id, const std::filesystem::path& image,
                                    Layout layout = Layout::single_image);
    /// Throws NotFoundError for unknown ids.
    std::shared_ptr<Project> get(const std::string& id);
    bool exists(const std::string& id);
    std::vector<std::string> list();

private:
    std::filesystem::path root_;
    std::mutex mu_;
    std::map<std::string, std::shared_ptr<Project>> open_;
};

/// SVSEG_PROJECT_ROOT or ./svseg-projects.
std::filesystem::path default_project_root();

}  // namespace svseg
