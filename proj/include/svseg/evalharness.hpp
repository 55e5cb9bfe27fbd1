#pragma once
// Point gold standards, object-level F1 matching, dataset summaries, a
// synthetic nuclei corpus and a scripted annotator for reproducible
// interactive-training runs.

#include "svseg/segment.hpp"

#include <string>
#include <vector>

namespace svseg {

struct GoldStandard {
    std::string image_id;
    std::vector<VoxelCoord> points;

    /// Throws PreconditionError for out-of-bounds or duplicated points.
    void validate(const Dims& dims) const;
};

/// "x,y[,z]" per line, 0-indexed; a non-numeric first line is a header.
GoldStandard parse_gold_standard(const std::string& text, std::string image_id = {});
std::string format_gold_standard(const GoldStandard& gold);
GoldStandard load_gold_standard(const std::filesystem::path& path);
void save_gold_standard(const GoldStandard& gold, const std::filesystem::path& path);

struct MatchReport {
    std::size_t tp = 0, fp = 0, fn = 0;
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn);
MatchReport make_report(std::size_t tp, std::size_t fp, std::size_t fn);

/// tp: objects containing a gold point; fp: objects containing none; fn:
/// gold points with no foreground voxel in their 1-voxel neighbourhood.
MatchReport match_objects(const LabelImage& labels, const GoldStandard& gold);

struct RunRecord {
    std::string method;
    std::string image_id;
    int cluster = -1;
    std::string model_source;  // image whose model produced the labels
    MatchReport report;
};

struct MethodSummary {
    std::string method;
    std::size_t runs = 0;
    double median_f1 = 0.0;
    double sigma_f1 = 0.0;  // population standard deviation
    double q1 = 0.0, q3 = 0.0;
    double min_f1 = 0.0, max_f1 = 0.0;
};

struct DatasetSummary {
    std::vector<MethodSummary> methods;  // first-appearance order
    std::vector<RunRecord> runs;

    const MethodSummary* find(const std::string& method) const;
};

/// Linear-interpolation quantile of a non-empty sample.
double quantile(std::vector<double> values, double q);

DatasetSummary evaluate_dataset(const std::vector<RunRecord>& runs);

/// Console table: method, runs, median F1, sigma.
std::string format_summary_table(const DatasetSummary& summary);

/// Structured summary plus a per-image breakdown grouped by cluster; images
/// with several runs of one method report quartiles.
std::string summary_json(const DatasetSummary& summary);

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

struct SynthSpec {
    Dims dims{256, 256, 1};
    int batches = 6;
    int images_per_batch = 4;
    int min_nuclei = 15;
    int max_nuclei = 22;
    double min_radius = 8.0;
    double max_radius = 12.0;
    int vessels = 2;
    /// Share of tissue patches drawn in the alternate tissue tone.
    double alt_tissue_fraction = 0.35;
    /// Nucleus-sized blobs in the vessel/lesion color; never in the gold set.
    int min_lesions = 6;
    int max_lesions = 10;
    double noise = 8.0;  // per-channel Gaussian sigma
    /// Explicit RGB offsets per batch; when empty, batches are spread on a
    /// circle of radius shift_magnitude in the plane orthogonal to grey.
    std::vector<std::array<double, 3>> batch_shifts;
    double shift_magnitude = 80.0;
    /// Per-batch stain strength: nucleus and vessel colors are pulled toward
    /// the background by a batch factor drawn from [1 - stain_variation, 1].
    double stain_variation = 0.0;
    /// Per-batch noise sigma drawn from noise * [1 - v, 1 + v].
    double noise_variation = 0.0;
    std::uint64_t seed = 1;

    void validate() const;
    std::array<double, 3> shift_of(int batch) const;

    struct BatchAppearance {
        std::array<double, 3> shift{};
        double stain = 1.0;
        double noise = 0.0;
    };
    BatchAppearance appearance_of(int batch) const;
};

struct SynthImage {
    std::string id;
    int batch = 0;
    RasterVolume volume;
    LabelImage truth;  // one label per nucleus
    GoldStandard gold;
};

/// Base colors before the batch shift.
struct SynthPalette {
    std::array<double, 3> background{170, 140, 160};
    std::array<double, 3> alternate_tissue{200, 180, 195};
    std::array<double, 3> nucleus{95, 70, 140};
    std::array<double, 3> vessel{150, 65, 65};  // also used for lesions
};

SynthImage generate_synth_image(const SynthSpec& spec, int batch, int index);
std::vector<SynthImage> generate_synth_corpus(const SynthSpec& spec);

/// Writes <id>.png, <id>_gold.csv, <id>_truth.png and corpus.json.
void save_synth_corpus(const std::vector<SynthImage>& corpus, const SynthSpec& spec, const std::filesystem::path& dir);

BinaryMask foreground_of(const LabelImage& labels);

// ---------------------------------------------------------------------------
// Scripted annotator
// ---------------------------------------------------------------------------

struct AnnotatorParams {
    int initial_foreground = 12;
    int initial_background = 16;
    int rounds = 2;
    int corrections_per_round = 10;
};

/// Single-voxel strokes on randomly chosen nucleus centres and on background
/// voxels at least two voxels away from any nucleus.
std::vector<AnnotationStroke> simulate_initial_strokes(const LabelImage& truth, const AnnotatorParams& params,
                                                       std::uint64_t seed);

/// Strokes on the most confidently misclassified supervoxels (majority
/// truth label), at most corrections_per_round of them.
std::vector<AnnotationStroke> simulate_corrections(const LabelImage& truth, const Oversegmentation& seg,
                                                   const ProbabilityMap& prob, const AnnotatorParams& params);

}  // namespace svseg
