#pragma once
// Classifier specification, hyperparameter search, the full training
// pipeline (split, scale, tune, evaluate, calibrate, refit) and the portable
// model artifact used for prediction and guided reuse.

#include "svseg/learn/calibration.hpp"
#include "svseg/learn/dataset.hpp"
#include "svseg/learn/forest.hpp"
#include "svseg/learn/svm.hpp"

#include <optional>
#include <string>
#include <variant>

namespace svseg {

enum class Family { random_forest, svm_rbf };
enum class Calibration { none, platt, isotonic };

std::string to_string(Family f);
std::string to_string(Calibration c);
Family parse_family(std::string_view s);
Calibration parse_calibration(std::string_view s);

struct ClassifierSpec {
    Family family = Family::random_forest;
    ForestParams forest;
    SvmParams svm;
    bool optimize = false;
    Calibration calibration = Calibration::none;
    int search_iterations = 25;
    std::uint64_t seed = 0;

    /// SVM margins are not probabilities, so SVM always gets at least Platt.
    Calibration effective_calibration() const;
};

/// One candidate from the random search and its cross-validation scores.
struct SearchCandidate {
    ForestParams forest;
    SvmParams svm;
    std::vector<double> fold_scores;
    double mean_score = 0.0;
};

struct SearchResult {
    int folds = 0;
    std::vector<SearchCandidate> candidates;
    std::size_t best = 0;
};

/// Samples `search_iterations` settings from the fixed ranges and scores each
/// by mean balanced accuracy over stratified folds of the (already scaled)
/// training set. The first-sampled candidate wins ties.
SearchResult random_search(const ClassifierSpec& spec, const Samples& train, std::uint64_t seed);

/// Fitted classifier of either family behind one raw-score interface.
struct Classifier {
    std::variant<RandomForest, SvmModel> model;

    /// RF: foreground probability. SVM: signed margin.
    double raw_score(std::span<const double> x) const;
    /// Decision rule on the raw score (p >= 0.5, margin >= 0).
    int predict_label(double raw) const;
    bool operator==(const Classifier&) const = default;
};

/// Class-weighted fit of the family with the given hyperparameters.
Classifier fit_classifier(Family family, const ForestParams& forest, const SvmParams& svm, const Samples& data,
                          std::uint64_t seed);

struct Calibrator {
    Calibration kind = Calibration::none;
    PlattSigmoid platt;
    IsotonicStep isotonic;

    double apply(double raw) const;
    bool operator==(const Calibrator&) const = default;
};

/// Probability without a calibrator: the RF output itself, or the logistic of
/// the SVM margin.
double uncalibrated_probability(Family family, double raw);

struct ScoreReport {
    double balanced_accuracy = 0.0;
    double brier = 0.0;
    ConfusionCounts confusion;
    std::size_t size = 0;
};

struct ModelMetadata {
    std::array<double, 2> class_weights{0, 0};
    std::array<std::size_t, 2> class_counts{0, 0};
    std::optional<ScoreReport> test_report;
    std::optional<SearchResult> search;
    int calibration_folds = 0;
    std::optional<double> brier_before;
    std::optional<double> brier_after;
};

struct TrainedModel {
    ClassifierSpec spec;  // resolved hyperparameters
    std::uint64_t layout_hash = 0;
    std::size_t row_length = 0;
    std::string feature_config;  // canonical FeatureConfig
    Scaler scaler;
    Classifier classifier;
    Calibrator calibrator;
    ModelMetadata metadata;

    double predict_row(std::span<const double> features) const;
};

/// Pooled out-of-fold calibration followed by a refit on the full database.
/// Fills scaler, classifier, calibrator and the calibration metadata.
void calibrate_cv(const ClassifierSpec& spec, const Samples& all, TrainedModel& model);

/// Full pipeline: stratified 70:30 split, scaler on the training split,
/// optional random search, test-split evaluation, then calibrate_cv.
TrainedModel train_model(const ClassifierSpec& spec, const TrainingDatabase& db, const FeatureConfig& config);

/// Evaluates a fitted pipeline on labelled rows (raw features, unscaled).
ScoreReport evaluate(const TrainedModel& model, const Samples& test);

struct ProbabilityMap {
    std::vector<double> p;
    std::size_t size() const { return p.size(); }
    bool operator==(const ProbabilityMap&) const = default;
};

/// Throws LayoutMismatchError when the feature layout differs from the
/// model's.
ProbabilityMap predict_proba(const TrainedModel& model, const FeatureMatrix& features);

inline constexpr std::uint32_t kModelVersion = 1;

std::vector<std::uint8_t> serialize_model(const TrainedModel& model);
TrainedModel deserialize_model(std::span<const std::uint8_t> bytes);
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path);

/// Binary probability map: magic "SVPM", version, count, f64 values, CRC32.
std::vector<std::uint8_t> serialize_probability_map(const ProbabilityMap& pm);
ProbabilityMap deserialize_probability_map(std::span<const std::uint8_t> bytes);
void save_probability_map(const ProbabilityMap& pm, const std::filesystem::path& path);
ProbabilityMap load_probability_map(const std::filesystem::path& path);

}  // namespace svseg
