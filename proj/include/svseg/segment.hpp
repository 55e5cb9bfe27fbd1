#pragma once
// Probability map to label image: threshold, then optional small-object
// removal, hole filling, topology-guarded smoothing and watershed splitting.
// Connectivity is face adjacency (4 in 2D, 6 in 3D) throughout.

#include "svseg/learn/model.hpp"

namespace svseg {

struct SegmentationParams {
    double threshold = 0.5;
    std::size_t min_object_size = 0;  // voxels, 0 disables
    std::size_t max_hole_size = 0;    // voxels, 0 disables
    int smooth_radius = 0;            // voxels, 0 disables
    bool watershed = false;
    double watershed_h = 1.0;  // h-maxima depth in voxels

    /// Throws PreconditionError for a threshold outside [0, 1], a negative
    /// radius or a non-positive watershed depth.
    void validate() const;
};

/// Size in voxels of `count` supervoxels of the segmentation's target size.
std::size_t supervoxel_multiple(const Oversegmentation& seg, double count);

/// Voxel is foreground iff its supervoxel's probability is >= threshold.
BinaryMask threshold_to_mask(const ProbabilityMap& prob, const Oversegmentation& seg, double threshold);

/// Connected components labelled 1..n in order of first raster occurrence.
LabelImage label_components(const BinaryMask& mask);

/// Deletes foreground components with fewer than min_size voxels.
BinaryMask remove_small_objects(const BinaryMask& mask, std::size_t min_size);

/// Fills background components that do not touch the image border and have
/// fewer than max_hole voxels.
BinaryMask fill_small_holes(const BinaryMask& mask, std::size_t max_hole);

/// Exact squared Euclidean distance from every voxel to the nearest voxel
/// whose mask value equals `target`. Voxels outside the image are ignored.
/// Infinity when no such voxel exists.
std::vector<double> squared_distance_to(const BinaryMask& mask, bool target);

BinaryMask dilate(const BinaryMask& mask, int radius);
BinaryMask erode(const BinaryMask& mask, int radius);

struct SmoothDiagnostics {
    std::size_t reverted_components = 0;
    bool fell_back_to_input = false;
};

/// Closing then opening with a Euclidean ball, followed by a component guard
/// that reverts merges, splits, vanished and newborn components.
BinaryMask morphological_smooth(const BinaryMask& mask, int radius, SmoothDiagnostics* diag = nullptr);

/// Marker-controlled split of touching objects along distance-field necks.
LabelImage watershed_split(const BinaryMask& mask, double h = 1.0);

/// Post-filters on an existing mask, then labelling.
LabelImage postprocess(const BinaryMask& mask, const SegmentationParams& params);

/// Threshold followed by postprocess.
LabelImage run_pipeline(const ProbabilityMap& prob, const Oversegmentation& seg, const SegmentationParams& params);

/// Number of boundary voxels: foreground voxels with a background face
/// neighbour inside the image.
std::size_t boundary_voxel_count(const BinaryMask& mask);

}  // namespace svseg
