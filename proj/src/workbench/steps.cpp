#include "svseg/workbench/steps.hpp"

#include <cctype>

namespace svseg {

WorkbenchConfig config_with_overrides(const WorkbenchConfig& base, const nlohmann::json& overrides) {
    if (overrides.is_null()) return base;
    if (!overrides.is_object()) throw FormatError("parameter overrides must be an object");
    WorkbenchConfig c = base;
    for (const auto& [key, value] : overrides.items()) {
        if (value.is_string()) c.set(key, value.get<std::string>());
        else if (value.is_number() || value.is_boolean()) c.set(key, value.dump());
        else throw FormatError("parameter '" + key + "' must be a string, number or boolean");
    }
    return c;
}

nlohmann::json preprocess_step(Project& project, const WorkbenchConfig& config, const ProgressFn& progress) {
    project.preprocess(config.slic_params(), config.feature_config(), config.slic_seed, progress);
    const auto untouched = segmentation_params_to_json(SegmentationParams{});
    if (segmentation_params_to_json(project.state().segmentation_params) == untouched) {
        project.set_segmentation_params(config.segmentation_params(project.load_supervoxels()));
    }
    const auto s = project.state();
    return {{"supervoxels", s.supervoxel_count},
            {"target_size", s.target_size},
            {"feature_config", s.feature_config},
            {"feature_length", project.load_features().cols()},
            {"generation", s.generation}};
}

nlohmann::json train_step(Project& project, const WorkbenchConfig& config, const ProgressFn& progress) {
    const auto model = project.train(config.classifier_spec(), progress);
    const auto& md = model.metadata;
    nlohmann::json j{{"classifier", config.classifier},
                     {"calibration", config.calibration},
                     {"row_length", model.row_length},
                     {"class_counts", {md.class_counts[0], md.class_counts[1]}},
                     {"class_weights", {md.class_weights[0], md.class_weights[1]}},
                     {"generation", project.state().generation}};
    if (md.test_report) {
        j["test"] = {{"balanced_accuracy", md.test_report->balanced_accuracy},
                     {"brier", md.test_report->brier},
                     {"size", md.test_report->size}};
    }
    if (md.brier_before) j["brier_before_calibration"] = *md.brier_before;
    if (md.brier_after) j["brier_after_calibration"] = *md.brier_after;
    return j;
}

nlohmann::json predict_step(Project& project, const ProgressFn& progress) {
    const auto prob = project.predict(progress);
    std::size_t fg = 0;
    for (double p : prob.p) fg += p >= 0.5;
    return {{"supervoxels", prob.size()}, {"foreground_supervoxels", fg}, {"generation", project.state().generation}};
}

nlohmann::json segment_step(Project& project, const nlohmann::json& overrides, const ProgressFn& progress) {
    project.require_probability();
    const auto params = segmentation_params_from_json(overrides.is_null() ? nlohmann::json::object() : overrides,
                                                      project.state().segmentation_params);
    const auto labels = project.segment(params, progress);
    return {{"objects", labels.max_label()},
            {"params", segmentation_params_to_json(params)},
            {"generation", project.state().generation}};
}

namespace {

std::string project_id_for(const std::string& dataset_id, const std::string& image_id) {
    std::string id = dataset_id + "-";
    for (char c : image_id) id += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    if (id.size() > 64) id.resize(64);
    return id;
}

}  // namespace

nlohmann::json cluster_step(DatasetStore& datasets, ProjectStore& projects, const std::string& dataset_id,
                            const WorkbenchConfig& config, const ProgressFn& progress) {
    auto state = datasets.get(dataset_id);
    if (progress) progress(0.05);
    const auto manifest = cluster_dataset(state.images, config.palette_params(), config.k_i, config.cluster_seed);
    if (progress) progress(0.8);
    datasets.save_manifest(dataset_id, manifest);
    state = datasets.get(dataset_id);
    state.prototype_projects.clear();
    for (const auto& e : manifest.images) {
        if (!e.is_prototype) continue;
        const auto pid = project_id_for(dataset_id, e.id);
        if (projects.exists(pid)) {
            const auto existing = projects.get(pid)->state();
            if (existing.image != std::filesystem::absolute(e.path).string()) {
                throw ConflictError("project '" + pid + "' exists for a different image");
            }
        } else {
            projects.create(pid, e.path);
        }
        state.prototype_projects[e.cluster] = pid;
    }
    datasets.save(state);
    if (progress) progress(1.0);
    nlohmann::json protos = nlohmann::json::object();
    for (const auto& [c, p] : state.prototype_projects) protos[std::to_string(c)] = p;
    return {{"manifest", nlohmann::json::parse(format_manifest(manifest))}, {"prototype_projects", protos}};
}

std::vector<ElbowPoint> elbow_step(const DatasetStore& datasets, const std::string& dataset_id,
                                   const WorkbenchConfig& config, int k_min, int k_max) {
    const auto state = datasets.get(dataset_id);
    if (k_min < 1 || k_max < k_min) throw PreconditionError("elbow scan needs 1 <= k_min <= k_max");
    if (static_cast<std::size_t>(k_max) > state.images.size()) {
        throw PreconditionError("k_max exceeds the number of dataset images");
    }
    const auto vectors = dataset_palettes(state.images, config.palette_params(), config.cluster_seed);
    return elbow_scan(vectors, k_min, k_max, config.cluster_seed);
}

std::map<std::string, TrainedModel> prototype_models(const DatasetStore& datasets, ProjectStore& projects,
                                                     const std::string& dataset_id) {
    const auto state = datasets.get(dataset_id);
    const auto manifest = datasets.manifest(dataset_id);
    std::map<std::string, TrainedModel> models;
    for (const auto& e : manifest.images) {
        if (!e.is_prototype) continue;
        const auto it = state.prototype_projects.find(e.cluster);
        if (it == state.prototype_projects.end() || !projects.exists(it->second)) {
            throw PreconditionError("missing model for prototype '" + e.id + "': no prototype project");
        }
        auto project = projects.get(it->second);
        if (!project->state().model) {
            throw PreconditionError("missing model for prototype '" + e.id + "': train required on project '" +
                                    it->second + "'");
        }
        models[e.id] = project->load_model();
    }
    return models;
}

std::string label_file_name(const std::string& stem, const Dims& dims) {
    return stem + (dims.z > 1 ? ".tif" : ".png");
}

nlohmann::json report_to_json(const MatchReport& r) {
    return {{"tp", r.tp}, {"fp", r.fp}, {"fn", r.fn}, {"precision", r.precision}, {"recall", r.recall}, {"f1", r.f1}};
}

nlohmann::json reuse_step(const ClusterManifest& manifest, const ReuseRequest& request, const WorkbenchConfig& config,
                          const std::filesystem::path& out_dir) {
    const auto slic = config.slic_params();
    const auto base_segmentation = request.segmentation;
    const SegmentationParamsFn seg_params = [&](const Oversegmentation& seg) {
        return segmentation_params_from_json(base_segmentation, config.segmentation_params(seg));
    };
    std::map<std::string, GoldStandard> gold;
    if (request.gold_dir) {
        for (const auto& e : manifest.images) {
            const auto path = *request.gold_dir / (e.id + "_gold.csv");
            if (!std::filesystem::exists(path)) throw PreconditionError("gold standard " + path.string() + " not found");
            gold[e.id] = load_gold_standard(path);
        }
    }
    const auto results =
        guided_reuse(manifest, request.models, request.mode, preprocessing_from_disk(slic, config.slic_seed), seg_params);

    std::filesystem::create_directories(out_dir);
    nlohmann::json list = nlohmann::json::array();
    std::vector<RunRecord> runs;
    for (const auto& r : results) {
        const auto file = label_file_name(r.image_id + "__" + r.model_source, r.labels.dims);
        write_label_image(r.labels, out_dir / file, LabelWriteMode::colorized);
        nlohmann::json item{{"image", r.image_id},
                            {"cluster", r.cluster},
                            {"model_source", r.model_source},
                            {"model_cluster", r.model_cluster},
                            {"objects", r.labels.max_label()},
                            {"labels", file}};
        if (request.gold_dir) {
            RunRecord rec;
            rec.method = request.mode == ReuseMode::intra ? "intra-cluster" : "inter-cluster";
            rec.image_id = r.image_id;
            rec.cluster = r.cluster;
            rec.model_source = r.model_source;
            rec.report = match_objects(r.labels, gold.at(r.image_id));
            item["report"] = report_to_json(rec.report);
            runs.push_back(rec);
        }
        list.push_back(std::move(item));
    }
    nlohmann::json out{{"mode", to_string(request.mode)}, {"results", list}};
    if (request.gold_dir && !runs.empty()) {
        const auto text = summary_json(evaluate_dataset(runs));
        write_file_atomic(out_dir / "summary.json", text);
        out["summary"] = nlohmann::json::parse(text);
    }
    write_file_atomic(out_dir / "results.json", out.dump(2) + "\n");
    return out;
}

}  // namespace svseg
