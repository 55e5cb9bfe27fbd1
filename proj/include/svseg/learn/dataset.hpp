#pragma once
// Annotation strokes, the training database they produce, and the sample
// plumbing used by the classifiers: dense matrices, stratified splits and
// folds, standardization and class weights.

#include "svseg/features.hpp"

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace svseg {

struct AnnotationStroke {
    int class_label = 1;  // 0 background, 1 foreground
    /// Brush path; consecutive points are joined by straight segments.
    std::vector<VoxelCoord> path;
    double radius = 0.0;
    /// When set, the brush is a disk in the slice perpendicular to this axis.
    /// Otherwise a sphere (a disk for 2D images).
    std::optional<Axis> plane;
    /// Explicit voxel set; used instead of the path when non-empty.
    std::vector<VoxelCoord> voxels;
};

/// Sorted, unique linear indices covered by a stroke. Throws PreconditionError
/// for out-of-bounds coordinates, a negative radius or an unknown class.
std::vector<std::size_t> rasterize_stroke(const AnnotationStroke& stroke, const Dims& dims);

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

    double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
    std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }

    Matrix select_rows(std::span<const std::size_t> idx) const;
};

/// Labelled samples. Labels are 0 (background) and 1 (foreground).
struct Samples {
    Matrix x;
    std::vector<int> y;

    std::size_t size() const { return y.size(); }
    std::array<std::size_t, 2> class_counts() const;
    Samples subset(std::span<const std::size_t> idx) const;
};

struct TrainingDatabase {
    std::uint64_t layout_hash = 0;
    std::vector<std::uint32_t> supervoxel_ids;
    Samples samples;

    std::size_t size() const { return samples.size(); }
    std::array<std::size_t, 2> class_counts() const { return samples.class_counts(); }
};

/// One row per supervoxel touched by any stroke, ordered by supervoxel id.
/// A later stroke overrides the label of an earlier one.
TrainingDatabase collect_training_data(const std::vector<AnnotationStroke>& strokes, const Oversegmentation& seg,
                                       const FeatureMatrix& features);

/// Text format: a comment line with the layout hash and row length, a column
/// header, then "supervoxel_id,label,f0,..." rows.
std::string format_training_database(const TrainingDatabase& db);
TrainingDatabase parse_training_database(const std::string& text);
void save_training_database(const TrainingDatabase& db, const std::filesystem::path& path);
TrainingDatabase load_training_database(const std::filesystem::path& path);

/// Throws SingleClassError unless both classes are present.
void require_both_classes(const std::array<std::size_t, 2>& counts);

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Per class, round(fraction * count) rows (half rounds up) go to the training
/// side after a seeded shuffle. Index lists are ascending.
Split stratified_split(std::span<const int> labels, double train_fraction, std::uint64_t seed);

/// Stratified k-fold assignment; returns the fold index of every row.
std::vector<int> stratified_folds(std::span<const int> labels, int k, std::uint64_t seed);

/// Fold count for cross-validation: 5, or 3 (with a warning) when a class has
/// fewer than 5 rows. Throws PreconditionError below 3.
int choose_fold_count(const std::array<std::size_t, 2>& counts);

class Scaler {
public:
    static Scaler fit(const Matrix& x);
    Matrix transform(const Matrix& x) const;
    void transform_row(std::span<const double> in, std::span<double> out) const;

    const std::vector<double>& mean() const { return mean_; }
    const std::vector<double>& scale() const { return scale_; }
    static Scaler from_parts(std::vector<double> mean, std::vector<double> scale);

    bool operator==(const Scaler&) const = default;

private:
    std::vector<double> mean_;
    std::vector<double> scale_;
};

/// w_c = n / (2 n_c), so per-row weights sum to n.
std::array<double, 2> class_weights(std::span<const int> labels);

/// Throws PreconditionError if any value is NaN or infinite.
void require_finite(const Matrix& x);

}  // namespace svseg
