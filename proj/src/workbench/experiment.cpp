#include "svseg/workbench/experiment.hpp"

#include <chrono>

namespace svseg {

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

ScriptedSession run_scripted_session(const SynthImage& image, const PreparedImage& prepared,
                                     const AnnotatorParams& annotator, const ClassifierSpec& classifier,
                                     const SegmentationParamsFn& segmentation_params, std::uint64_t seed) {
    ScriptedSession s;
    s.strokes = simulate_initial_strokes(image.truth, annotator, seed);
    const auto params = segmentation_params(prepared.seg);
    for (int round = 0; round <= annotator.rounds; ++round) {
        const auto db = collect_training_data(s.strokes, prepared.seg, prepared.features);
        s.model = train_model(classifier, db, prepared.features.config());
        s.probability = predict_proba(s.model, prepared.features);
        s.labels = run_pipeline(s.probability, prepared.seg, params);
        s.round_f1.push_back(match_objects(s.labels, image.gold).f1);
        if (round == annotator.rounds) break;
        const auto more = simulate_corrections(image.truth, prepared.seg, s.probability, annotator);
        if (more.empty()) break;
        s.strokes.insert(s.strokes.end(), more.begin(), more.end());
    }
    return s;
}

SegmentationParams ExperimentParams::segmentation_params(const Oversegmentation& seg) const {
    SegmentationParams p;
    p.min_object_size = supervoxel_multiple(seg, min_object_supervoxels);
    p.max_hole_size = supervoxel_multiple(seg, max_hole_supervoxels);
    p.smooth_radius = smooth_radius;
    p.watershed = watershed;
    p.watershed_h = watershed_h;
    p.validate();
    return p;
}

ExperimentReport run_reuse_experiment(const ExperimentParams& params) {
    const auto t_start = std::chrono::steady_clock::now();
    ExperimentReport report;
    const auto corpus = generate_synth_corpus(params.corpus);
    const auto seg_params = [&](const Oversegmentation& seg) { return params.segmentation_params(seg); };

    auto t0 = std::chrono::steady_clock::now();
    std::vector<PreparedImage> prepared(corpus.size());
    parallel_for(corpus.size(), [&](std::size_t i) {
        prepared[i].seg = generate_supervoxels(corpus[i].volume, params.slic, derive_seed(params.seed, 0x51C, i));
        prepared[i].features = compute_features(corpus[i].volume, prepared[i].seg, params.features);
    });
    report.seconds_preprocess = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    std::vector<ScriptedSession> sessions(corpus.size());
    parallel_for(corpus.size(), [&](std::size_t i) {
        auto spec = params.classifier;
        spec.seed = derive_seed(params.seed, 0x7A1, i);
        sessions[i] = run_scripted_session(corpus[i], prepared[i], params.annotator, spec, seg_params,
                                           derive_seed(params.seed, 0xA77, i));
    });
    report.seconds_sessions = seconds_since(t0);

    t0 = std::chrono::steady_clock::now();
    std::vector<DominantColorVector> vectors(corpus.size());
    parallel_for(corpus.size(), [&](std::size_t i) {
        vectors[i] = dominant_colors(corpus[i].volume, params.palette, derive_seed(params.seed, 0xDC, i), corpus[i].id);
    });
    const auto clustering = cluster_images(vectors, params.k_i, derive_seed(params.seed, 0xC1));
    std::vector<std::string> paths;
    for (const auto& img : corpus) paths.push_back(img.id);
    report.manifest = make_manifest(vectors, paths, clustering, params.palette, derive_seed(params.seed, 0xC1));
    report.seconds_cluster = seconds_since(t0);
    for (const auto& img : corpus) report.batches.push_back(img.batch);
    for (std::size_t i = 0; i < corpus.size(); ++i)
        for (std::size_t j = i + 1; j < corpus.size(); ++j) {
            const bool same_cluster = clustering.assignments[i] == clustering.assignments[j];
            if (same_cluster != (corpus[i].batch == corpus[j].batch)) ++report.cluster_batch_disagreements;
        }

    std::vector<RunRecord> runs;
    std::map<std::string, std::size_t> index_of;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        index_of[corpus[i].id] = i;
        RunRecord r;
        r.method = "interactive";
        r.image_id = corpus[i].id;
        r.cluster = clustering.assignments[i];
        r.model_source = corpus[i].id;
        r.report = match_objects(sessions[i].labels, corpus[i].gold);
        runs.push_back(r);
    }

    t0 = std::chrono::steady_clock::now();
    std::map<std::string, TrainedModel> models;
    for (const auto& e : report.manifest.images)
        if (e.is_prototype) models[e.id] = sessions[index_of.at(e.id)].model;
    const PrepareFn cached = [&](const ManifestEntry& e, const FeatureConfig& config) {
        const auto& p = prepared[index_of.at(e.id)];
        if (config.canonical() != p.features.config().canonical()) {
            throw LayoutMismatchError("reuse model layout differs from the experiment's feature layout");
        }
        return p;
    };
    for (auto mode : {ReuseMode::intra, ReuseMode::inter}) {
        for (const auto& r : guided_reuse(report.manifest, models, mode, cached, seg_params)) {
            RunRecord rec;
            rec.method = mode == ReuseMode::intra ? "intra-cluster" : "inter-cluster";
            rec.image_id = r.image_id;
            rec.cluster = r.cluster;
            rec.model_source = r.model_source;
            rec.report = match_objects(r.labels, corpus[index_of.at(r.image_id)].gold);
            runs.push_back(rec);
        }
    }
    report.seconds_reuse = seconds_since(t0);
    report.summary = evaluate_dataset(runs);
    report.seconds_total = seconds_since(t_start);
    return report;
}

}  // namespace svseg
