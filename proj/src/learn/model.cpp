#include "svseg/learn/model.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>

namespace svseg {

using nlohmann::json;

std::string to_string(Family f) { return f == Family::random_forest ? "rf" : "svm"; }

std::string to_string(Calibration c) {
    switch (c) {
        case Calibration::none: return "none";
        case Calibration::platt: return "platt";
        case Calibration::isotonic: return "isotonic";
    }
    return "none";
}

Family parse_family(std::string_view s) {
    if (s == "rf" || s == "random-forest") return Family::random_forest;
    if (s == "svm" || s == "svm-rbf") return Family::svm_rbf;
    throw PreconditionError("classifier must be 'rf' or 'svm'");
}

Calibration parse_calibration(std::string_view s) {
    if (s == "none") return Calibration::none;
    if (s == "platt") return Calibration::platt;
    if (s == "isotonic") return Calibration::isotonic;
    throw PreconditionError("calibration must be 'none', 'platt' or 'isotonic'");
}

Calibration ClassifierSpec::effective_calibration() const {
    if (family == Family::svm_rbf && calibration == Calibration::none) return Calibration::platt;
    return calibration;
}

// ---------------------------------------------------------------------------
// Classifier facade
// ---------------------------------------------------------------------------

double Classifier::raw_score(std::span<const double> x) const {
    if (const auto* rf = std::get_if<RandomForest>(&model)) return rf->predict(x);
    return std::get<SvmModel>(model).decision(x);
}

int Classifier::predict_label(double raw) const {
    if (std::holds_alternative<RandomForest>(model)) return raw >= 0.5 ? 1 : 0;
    return raw >= 0.0 ? 1 : 0;
}

Classifier fit_classifier(Family family, const ForestParams& forest, const SvmParams& svm, const Samples& data,
                          std::uint64_t seed) {
    require_both_classes(data.class_counts());
    const auto w = class_weights(data.y);
    Classifier c;
    if (family == Family::random_forest) c.model = fit_forest(data, forest, w, seed);
    else c.model = fit_svm(data, svm, w);
    return c;
}

double uncalibrated_probability(Family family, double raw) {
    if (family == Family::random_forest) return raw;
    return PlattSigmoid{-1.0, 0.0}(raw);
}

double Calibrator::apply(double raw) const {
    switch (kind) {
        case Calibration::platt: return platt(raw);
        case Calibration::isotonic: return std::clamp(isotonic(raw), 0.0, 1.0);
        case Calibration::none: break;
    }
    return std::clamp(raw, 0.0, 1.0);
}

namespace {

Calibrator fit_calibrator(Calibration kind, std::span<const double> raw, std::span<const int> y) {
    Calibrator c;
    c.kind = kind;
    if (kind == Calibration::platt) {
        c.platt = fit_platt(raw, y);
    } else if (kind == Calibration::isotonic) {
        std::vector<double> t(y.begin(), y.end());
        c.isotonic = fit_isotonic(raw, t);
    }
    return c;
}

std::vector<double> raw_scores(const Classifier& c, const Matrix& x) {
    std::vector<double> out(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r) out[r] = c.raw_score(x.row(r));
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Random search
// ---------------------------------------------------------------------------

SearchResult random_search(const ClassifierSpec& spec, const Samples& train, std::uint64_t seed) {
    if (spec.search_iterations < 1) throw PreconditionError("search_iterations must be positive");
    require_both_classes(train.class_counts());
    SearchResult result;
    result.folds = choose_fold_count(train.class_counts());
    const auto fold = stratified_folds(train.y, result.folds, seed);

    Rng sampler(derive_seed(seed, 0x5EA7C4));
    const int depths[4] = {0, 8, 16, 32};
    const double fractions[3] = {0.0, 0.1, 0.3};
    for (int c = 0; c < spec.search_iterations; ++c) {
        SearchCandidate cand;
        cand.forest = spec.forest;
        cand.svm = spec.svm;
        if (spec.family == Family::random_forest) {
            cand.forest.n_trees = static_cast<int>(sampler.uniform_int(50, 400));
            cand.forest.max_depth = depths[sampler.uniform_index(4)];
            cand.forest.min_leaf = static_cast<int>(sampler.uniform_int(1, 10));
            cand.forest.feature_fraction = fractions[sampler.uniform_index(3)];
        } else {
            cand.svm.c = sampler.log_uniform(1e-2, 1e3);
            cand.svm.gamma = sampler.log_uniform(1e-4, 1e1);
        }
        cand.fold_scores.assign(static_cast<std::size_t>(result.folds), 0.0);
        result.candidates.push_back(cand);
    }

    std::vector<std::vector<std::size_t>> fit_rows(static_cast<std::size_t>(result.folds));
    std::vector<std::vector<std::size_t>> eval_rows(static_cast<std::size_t>(result.folds));
    for (std::size_t i = 0; i < train.size(); ++i) {
        for (int f = 0; f < result.folds; ++f) (fold[i] == f ? eval_rows : fit_rows)[static_cast<std::size_t>(f)].push_back(i);
    }
    const auto n_folds = static_cast<std::size_t>(result.folds);
    parallel_for(result.candidates.size() * n_folds, [&](std::size_t task) {
        const std::size_t c = task / n_folds, f = task % n_folds;
        auto& cand = result.candidates[c];
        const Samples fit = train.subset(fit_rows[f]);
        const Samples held = train.subset(eval_rows[f]);
        const auto model = fit_classifier(spec.family, cand.forest, cand.svm, fit, derive_seed(seed, c, f));
        std::vector<int> pred(held.size());
        for (std::size_t r = 0; r < held.size(); ++r) pred[r] = model.predict_label(model.raw_score(held.x.row(r)));
        cand.fold_scores[f] = balanced_accuracy(held.y, pred);
    });
    for (std::size_t c = 0; c < result.candidates.size(); ++c) {
        auto& cand = result.candidates[c];
        double s = 0;
        for (double v : cand.fold_scores) s += v;
        cand.mean_score = s / static_cast<double>(n_folds);
        if (cand.mean_score > result.candidates[result.best].mean_score) result.best = c;
    }
    return result;
}

// ---------------------------------------------------------------------------
// Training pipeline
// ---------------------------------------------------------------------------

double TrainedModel::predict_row(std::span<const double> features) const {
    std::vector<double> z(features.size());
    scaler.transform_row(features, z);
    return calibrator.apply(classifier.raw_score(z));
}

void calibrate_cv(const ClassifierSpec& spec, const Samples& all, TrainedModel& model) {
    require_both_classes(all.class_counts());
    Calibration kind = spec.effective_calibration();
    if (kind == Calibration::isotonic && all.size() < 20) {
        warn("isotonic calibration needs at least 20 samples; falling back to Platt scaling");
        kind = Calibration::platt;
    }
    model.metadata.class_weights = class_weights(all.y);
    model.metadata.class_counts = all.class_counts();
    model.calibrator = Calibrator{};
    if (kind != Calibration::none) {
        const int k = choose_fold_count(all.class_counts());
        const auto fold = stratified_folds(all.y, k, derive_seed(spec.seed, 4));
        std::vector<double> oof(all.size(), 0.0);
        parallel_for(static_cast<std::size_t>(k), [&](std::size_t f) {
            std::vector<std::size_t> fit_idx, held_idx;
            for (std::size_t i = 0; i < all.size(); ++i) (fold[i] == static_cast<int>(f) ? held_idx : fit_idx).push_back(i);
            const Samples fit = all.subset(fit_idx);
            const Scaler sc = Scaler::fit(fit.x);
            const auto clf = fit_classifier(spec.family, spec.forest, spec.svm, Samples{sc.transform(fit.x), fit.y},
                                            derive_seed(spec.seed, 5, f));
            std::vector<double> z(all.x.cols);
            for (auto i : held_idx) {
                sc.transform_row(all.x.row(i), z);
                oof[i] = clf.raw_score(z);
            }
        });
        std::vector<double> before(all.size()), after(all.size());
        model.calibrator = fit_calibrator(kind, oof, all.y);
        for (std::size_t i = 0; i < all.size(); ++i) {
            before[i] = uncalibrated_probability(spec.family, oof[i]);
            after[i] = model.calibrator.apply(oof[i]);
        }
        model.metadata.calibration_folds = k;
        model.metadata.brier_before = brier_score(all.y, before);
        model.metadata.brier_after = brier_score(all.y, after);
    }
    model.spec = spec;
    model.spec.calibration = kind;
    model.scaler = Scaler::fit(all.x);
    model.classifier = fit_classifier(spec.family, spec.forest, spec.svm, Samples{model.scaler.transform(all.x), all.y},
                                      derive_seed(spec.seed, 6));
}

ScoreReport evaluate(const TrainedModel& model, const Samples& test) {
    if (test.size() == 0) throw PreconditionError("empty test split");
    std::vector<int> pred(test.size());
    std::vector<double> prob(test.size());
    std::vector<double> z(test.x.cols);
    for (std::size_t r = 0; r < test.size(); ++r) {
        model.scaler.transform_row(test.x.row(r), z);
        const double raw = model.classifier.raw_score(z);
        pred[r] = model.classifier.predict_label(raw);
        prob[r] = model.calibrator.apply(raw);
    }
    ScoreReport rep;
    rep.balanced_accuracy = balanced_accuracy(test.y, pred);
    rep.brier = brier_score(test.y, prob);
    rep.confusion = confusion(test.y, pred);
    rep.size = test.size();
    return rep;
}

TrainedModel train_model(const ClassifierSpec& spec, const TrainingDatabase& db, const FeatureConfig& config) {
    const auto layout = layout_of(config);
    if (db.layout_hash != config.layout_hash() || db.samples.x.cols != layout.row_length) {
        throw LayoutMismatchError("training database layout does not match the feature configuration");
    }
    require_both_classes(db.class_counts());
    require_finite(db.samples.x);

    // Stage 1: held-out evaluation on a stratified 70:30 split.
    const Split split = stratified_split(db.samples.y, 0.7, derive_seed(spec.seed, 1));
    const Samples train = db.samples.subset(split.train);
    const Samples test = db.samples.subset(split.test);
    TrainedModel interim;
    interim.scaler = Scaler::fit(train.x);
    const Samples train_z{interim.scaler.transform(train.x), train.y};

    ClassifierSpec resolved = spec;
    std::optional<SearchResult> search;
    if (spec.optimize) {
        search = random_search(spec, train_z, derive_seed(spec.seed, 2));
        const auto& best = search->candidates[search->best];
        resolved.forest = best.forest;
        resolved.svm = best.svm;
    }
    if (resolved.family == Family::svm_rbf) resolved.svm.gamma = resolved_gamma(resolved.svm, train.x.cols);
    interim.classifier = fit_classifier(resolved.family, resolved.forest, resolved.svm, train_z, derive_seed(spec.seed, 3));
    if (resolved.family == Family::svm_rbf) {
        interim.calibrator.kind = Calibration::platt;
        interim.calibrator.platt = fit_platt(raw_scores(interim.classifier, train_z.x), train_z.y);
    }
    const ScoreReport report = evaluate(interim, test);

    // Stage 2: calibrated model refitted on the whole database.
    TrainedModel model;
    calibrate_cv(resolved, db.samples, model);
    model.layout_hash = db.layout_hash;
    model.row_length = db.samples.x.cols;
    model.feature_config = config.canonical();
    model.metadata.test_report = report;
    model.metadata.search = search;
    return model;
}

ProbabilityMap predict_proba(const TrainedModel& model, const FeatureMatrix& features) {
    if (features.layout_hash() != model.layout_hash || features.cols() != model.row_length) {
        throw LayoutMismatchError("feature layout (" + std::to_string(features.cols()) +
                                  " columns) does not match the model's layout (" + std::to_string(model.row_length) +
                                  " columns); the features were computed with a different configuration");
    }
    ProbabilityMap pm;
    pm.p.assign(features.rows(), 0.0);
    const std::size_t chunk = 512;
    parallel_for((features.rows() + chunk - 1) / chunk, [&](std::size_t c) {
        std::vector<double> row(features.cols());
        const std::size_t hi = std::min(features.rows(), (c + 1) * chunk);
        for (std::size_t r = c * chunk; r < hi; ++r) {
            const auto f = features.row(r);
            std::copy(f.begin(), f.end(), row.begin());
            pm.p[r] = model.predict_row(row);
        }
    });
    return pm;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {

json forest_params_json(const ForestParams& p) {
    return {{"n_trees", p.n_trees}, {"max_depth", p.max_depth}, {"min_leaf", p.min_leaf},
            {"feature_fraction", p.feature_fraction}};
}

ForestParams forest_params_from(const json& j) {
    ForestParams p;
    p.n_trees = j.at("n_trees").get<int>();
    p.max_depth = j.at("max_depth").get<int>();
    p.min_leaf = j.at("min_leaf").get<int>();
    p.feature_fraction = j.at("feature_fraction").get<double>();
    return p;
}

json svm_params_json(const SvmParams& p) {
    return {{"c", p.c}, {"gamma", p.gamma}, {"tolerance", p.tolerance}, {"max_iterations", p.max_iterations}};
}

SvmParams svm_params_from(const json& j) {
    SvmParams p;
    p.c = j.at("c").get<double>();
    p.gamma = j.at("gamma").get<double>();
    p.tolerance = j.at("tolerance").get<double>();
    p.max_iterations = j.at("max_iterations").get<long>();
    return p;
}

json report_json(const ScoreReport& r) {
    return {{"balanced_accuracy", r.balanced_accuracy},
            {"brier", r.brier},
            {"size", r.size},
            {"tp", r.confusion.tp},
            {"fp", r.confusion.fp},
            {"tn", r.confusion.tn},
            {"fn", r.confusion.fn}};
}

ScoreReport report_from(const json& j) {
    ScoreReport r;
    r.balanced_accuracy = j.at("balanced_accuracy").get<double>();
    r.brier = j.at("brier").get<double>();
    r.size = j.at("size").get<std::size_t>();
    r.confusion.tp = j.at("tp").get<std::size_t>();
    r.confusion.fp = j.at("fp").get<std::size_t>();
    r.confusion.tn = j.at("tn").get<std::size_t>();
    r.confusion.fn = j.at("fn").get<std::size_t>();
    return r;
}

json matrix_json(const Matrix& m) { return {{"rows", m.rows}, {"cols", m.cols}, {"values", m.values}}; }

Matrix matrix_from(const json& j) {
    Matrix m;
    m.rows = j.at("rows").get<std::size_t>();
    m.cols = j.at("cols").get<std::size_t>();
    m.values = j.at("values").get<std::vector<double>>();
    if (m.values.size() != m.rows * m.cols) throw FormatError("model: matrix size mismatch");
    return m;
}

json model_json(const TrainedModel& m) {
    json j;
    j["spec"] = {{"family", to_string(m.spec.family)},
                 {"forest", forest_params_json(m.spec.forest)},
                 {"svm", svm_params_json(m.spec.svm)},
                 {"optimize", m.spec.optimize},
                 {"calibration", to_string(m.spec.calibration)},
                 {"search_iterations", m.spec.search_iterations},
                 {"seed", m.spec.seed}};
    j["layout_hash"] = m.layout_hash;
    j["row_length"] = m.row_length;
    j["feature_config"] = m.feature_config;
    j["scaler"] = {{"mean", m.scaler.mean()}, {"scale", m.scaler.scale()}};

    if (const auto* rf = std::get_if<RandomForest>(&m.classifier.model)) {
        json trees = json::array();
        for (const auto& t : rf->trees) {
            trees.push_back({{"feature", t.feature},
                             {"threshold", t.threshold},
                             {"left", t.left},
                             {"right", t.right},
                             {"value", t.value}});
        }
        j["classifier"] = {{"type", "rf"}, {"params", forest_params_json(rf->params)}, {"trees", trees}};
    } else {
        const auto& svm = std::get<SvmModel>(m.classifier.model);
        j["classifier"] = {{"type", "svm"},
                           {"params", svm_params_json(svm.params)},
                           {"gamma", svm.gamma},
                           {"support_vectors", matrix_json(svm.support_vectors)},
                           {"coef", svm.coef},
                           {"bias", svm.bias}};
    }
    j["calibrator"] = {{"kind", to_string(m.calibrator.kind)},
                       {"platt_a", m.calibrator.platt.a},
                       {"platt_b", m.calibrator.platt.b},
                       {"isotonic_threshold", m.calibrator.isotonic.threshold},
                       {"isotonic_value", m.calibrator.isotonic.value}};

    const auto& md = m.metadata;
    json meta = {{"class_weights", md.class_weights},
                 {"class_counts", md.class_counts},
                 {"calibration_folds", md.calibration_folds},
                 {"train_fraction", 0.7}};
    meta["test_report"] = md.test_report ? report_json(*md.test_report) : json(nullptr);
    meta["brier_before"] = md.brier_before ? json(*md.brier_before) : json(nullptr);
    meta["brier_after"] = md.brier_after ? json(*md.brier_after) : json(nullptr);
    if (md.search) {
        json cands = json::array();
        for (const auto& c : md.search->candidates) {
            cands.push_back({{"forest", forest_params_json(c.forest)},
                             {"svm", svm_params_json(c.svm)},
                             {"fold_scores", c.fold_scores},
                             {"mean_score", c.mean_score}});
        }
        meta["search"] = {{"folds", md.search->folds}, {"best", md.search->best}, {"candidates", cands}};
    } else {
        meta["search"] = nullptr;
    }
    meta["search_ranges"] = {{"rf_n_trees", {50, 400}},
                             {"rf_max_depth", {0, 8, 16, 32}},
                             {"rf_min_leaf", {1, 10}},
                             {"rf_feature_fraction", {"sqrt", 0.1, 0.3}},
                             {"svm_c_log_uniform", {1e-2, 1e3}},
                             {"svm_gamma_log_uniform", {1e-4, 1e1}}};
    j["metadata"] = meta;
    return j;
}

TrainedModel model_from(const json& j) {
    TrainedModel m;
    const auto& s = j.at("spec");
    m.spec.family = parse_family(s.at("family").get<std::string>());
    m.spec.forest = forest_params_from(s.at("forest"));
    m.spec.svm = svm_params_from(s.at("svm"));
    m.spec.optimize = s.at("optimize").get<bool>();
    m.spec.calibration = parse_calibration(s.at("calibration").get<std::string>());
    m.spec.search_iterations = s.at("search_iterations").get<int>();
    m.spec.seed = s.at("seed").get<std::uint64_t>();
    m.layout_hash = j.at("layout_hash").get<std::uint64_t>();
    m.row_length = j.at("row_length").get<std::size_t>();
    m.feature_config = j.at("feature_config").get<std::string>();
    m.scaler = Scaler::from_parts(j.at("scaler").at("mean").get<std::vector<double>>(),
                                  j.at("scaler").at("scale").get<std::vector<double>>());
    if (m.scaler.mean().size() != m.row_length) throw FormatError("model: scaler width does not match row length");

    const auto& c = j.at("classifier");
    const auto type = c.at("type").get<std::string>();
    if (type == "rf") {
        RandomForest rf;
        rf.params = forest_params_from(c.at("params"));
        for (const auto& t : c.at("trees")) {
            DecisionTree tree;
            tree.feature = t.at("feature").get<std::vector<int>>();
            tree.threshold = t.at("threshold").get<std::vector<double>>();
            tree.left = t.at("left").get<std::vector<int>>();
            tree.right = t.at("right").get<std::vector<int>>();
            tree.value = t.at("value").get<std::vector<double>>();
            const auto n = tree.feature.size();
            if (n == 0 || tree.threshold.size() != n || tree.left.size() != n || tree.right.size() != n ||
                tree.value.size() != n) {
                throw FormatError("model: inconsistent tree arrays");
            }
            for (std::size_t k = 0; k < n; ++k) {
                if (tree.feature[k] < 0) continue;
                if (tree.feature[k] >= static_cast<int>(m.row_length) || tree.left[k] <= static_cast<int>(k) ||
                    tree.right[k] <= static_cast<int>(k) || tree.left[k] >= static_cast<int>(n) ||
                    tree.right[k] >= static_cast<int>(n)) {
                    throw FormatError("model: invalid tree node");
                }
            }
            rf.trees.push_back(std::move(tree));
        }
        m.classifier.model = std::move(rf);
    } else if (type == "svm") {
        SvmModel svm;
        svm.params = svm_params_from(c.at("params"));
        svm.gamma = c.at("gamma").get<double>();
        svm.support_vectors = matrix_from(c.at("support_vectors"));
        svm.coef = c.at("coef").get<std::vector<double>>();
        svm.bias = c.at("bias").get<double>();
        if (svm.coef.size() != svm.support_vectors.rows) throw FormatError("model: SVM coefficient count mismatch");
        m.classifier.model = std::move(svm);
    } else {
        throw FormatError("model: unknown classifier type '" + type + "'");
    }
    const auto& cal = j.at("calibrator");
    m.calibrator.kind = parse_calibration(cal.at("kind").get<std::string>());
    m.calibrator.platt = {cal.at("platt_a").get<double>(), cal.at("platt_b").get<double>()};
    m.calibrator.isotonic.threshold = cal.at("isotonic_threshold").get<std::vector<double>>();
    m.calibrator.isotonic.value = cal.at("isotonic_value").get<std::vector<double>>();

    const auto& meta = j.at("metadata");
    m.metadata.class_weights = meta.at("class_weights").get<std::array<double, 2>>();
    m.metadata.class_counts = meta.at("class_counts").get<std::array<std::size_t, 2>>();
    m.metadata.calibration_folds = meta.at("calibration_folds").get<int>();
    if (!meta.at("test_report").is_null()) m.metadata.test_report = report_from(meta.at("test_report"));
    if (!meta.at("brier_before").is_null()) m.metadata.brier_before = meta.at("brier_before").get<double>();
    if (!meta.at("brier_after").is_null()) m.metadata.brier_after = meta.at("brier_after").get<double>();
    if (!meta.at("search").is_null()) {
        SearchResult sr;
        sr.folds = meta.at("search").at("folds").get<int>();
        sr.best = meta.at("search").at("best").get<std::size_t>();
        for (const auto& cj : meta.at("search").at("candidates")) {
            SearchCandidate cand;
            cand.forest = forest_params_from(cj.at("forest"));
            cand.svm = svm_params_from(cj.at("svm"));
            cand.fold_scores = cj.at("fold_scores").get<std::vector<double>>();
            cand.mean_score = cj.at("mean_score").get<double>();
            sr.candidates.push_back(std::move(cand));
        }
        m.metadata.search = std::move(sr);
    }
    return m;
}

}  // namespace

std::vector<std::uint8_t> serialize_model(const TrainedModel& model) {
    ByteWriter w;
    w.magic("SVMD");
    w.u32(kModelVersion);
    w.str(model_json(model).dump());
    w.seal();
    return w.take();
}

TrainedModel deserialize_model(std::span<const std::uint8_t> bytes) {
    ByteReader r(verify_sealed(bytes, "model artifact"));
    r.expect_magic("SVMD", "model artifact");
    const auto version = r.u32();
    if (version != kModelVersion) throw FormatError("model artifact: unsupported version " + std::to_string(version));
    try {
        return model_from(json::parse(r.str()));
    } catch (const json::exception& e) {
        throw FormatError(std::string("model artifact: ") + e.what());
    }
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_model(model));
}

TrainedModel load_model(const std::filesystem::path& path) { return deserialize_model(read_file_bytes(path)); }

std::vector<std::uint8_t> serialize_probability_map(const ProbabilityMap& pm) {
    ByteWriter w;
    w.magic("SVPM");
    w.u32(1);
    w.u64(pm.p.size());
    for (double v : pm.p) w.f64(v);
    w.seal();
    return w.take();
}

ProbabilityMap deserialize_probability_map(std::span<const std::uint8_t> bytes) {
    ByteReader r(verify_sealed(bytes, "probability map"));
    r.expect_magic("SVPM", "probability map");
    if (r.u32() != 1) throw FormatError("probability map: unsupported version");
    const auto n = r.u64();
    if (r.remaining() != n * 8) throw FormatError("probability map: payload size mismatch");
    ProbabilityMap pm;
    pm.p.resize(n);
    for (auto& v : pm.p) v = r.f64();
    return pm;
}

void save_probability_map(const ProbabilityMap& pm, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_probability_map(pm));
}

ProbabilityMap load_probability_map(const std::filesystem::path& path) {
    return deserialize_probability_map(read_file_bytes(path));
}

}  // namespace svseg
