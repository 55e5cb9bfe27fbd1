#pragma once
// Scripted version of the interactive loop and the reuse comparison on a
// synthetic corpus: dedicated models per image, intra-cluster reuse from
// prototypes, inter-cluster reuse across clusters.

#include "svseg/evalharness.hpp"
#include "svseg/workbench/dataset.hpp"

namespace svseg {

struct ScriptedSession {
    std::vector<AnnotationStroke> strokes;
    TrainedModel model;
    ProbabilityMap probability;
    LabelImage labels;
    std::vector<double> round_f1;  // after each training round
};

/// Initial strokes, then `annotator.rounds` correction rounds, retraining
/// after each.
ScriptedSession run_scripted_session(const SynthImage& image, const PreparedImage& prepared,
                                     const AnnotatorParams& annotator, const ClassifierSpec& classifier,
                                     const SegmentationParamsFn& segmentation_params, std::uint64_t seed);

struct ExperimentParams {
    SynthSpec corpus;
    SlicParams slic;
    FeatureConfig features;
    AnnotatorParams annotator;
    ClassifierSpec classifier;
    double min_object_supervoxels = 1;
    double max_hole_supervoxels = 3;
    int smooth_radius = 1;
    bool watershed = true;
    double watershed_h = 1.0;
    PaletteParams palette;
    int k_i = 6;
    std::uint64_t seed = 1;

    SegmentationParams segmentation_params(const Oversegmentation& seg) const;
};

struct ExperimentReport {
    DatasetSummary summary;  // methods "interactive", "intra-cluster", "inter-cluster"
    ClusterManifest manifest;
    std::vector<int> batches;  // per manifest image
    /// Pairs of images whose same-cluster relation differs from same-batch.
    std::size_t cluster_batch_disagreements = 0;
    double seconds_preprocess = 0, seconds_sessions = 0, seconds_cluster = 0, seconds_reuse = 0;
    double seconds_total = 0;
};

ExperimentReport run_reuse_experiment(const ExperimentParams& params);

}  // namespace svseg
