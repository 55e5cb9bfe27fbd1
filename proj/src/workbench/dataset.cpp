#include "svseg/workbench/dataset.hpp"

#include <set>

namespace svseg {

std::vector<DatasetImage> dataset_images(const std::vector<std::filesystem::path>& paths) {
    std::vector<DatasetImage> out;
    std::set<std::string> seen;
    for (const auto& p : paths) {
        DatasetImage img{p.stem().string(), std::filesystem::absolute(p).string()};
        if (!seen.insert(img.id).second) throw PreconditionError("duplicate image id '" + img.id + "' in dataset");
        out.push_back(std::move(img));
    }
    if (out.empty()) throw PreconditionError("dataset needs at least one image");
    return out;
}

std::vector<DominantColorVector> dataset_palettes(const std::vector<DatasetImage>& images, const PaletteParams& params,
                                                  std::uint64_t seed, Layout layout) {
    std::vector<DominantColorVector> out(images.size());
    parallel_for(images.size(), [&](std::size_t i) {
        out[i] = dominant_colors(load_volume(images[i].path, layout), params, derive_seed(seed, i), images[i].id);
    });
    return out;
}

ClusterManifest cluster_dataset(const std::vector<DatasetImage>& images, const PaletteParams& params, int k_i,
                                std::uint64_t seed, Layout layout) {
    const auto vectors = dataset_palettes(images, params, seed, layout);
    const auto clustering = cluster_images(vectors, k_i, seed);
    std::vector<std::string> paths;
    for (const auto& img : images) paths.push_back(img.path);
    return make_manifest(vectors, paths, clustering, params, seed);
}

// ---------------------------------------------------------------------------
// Guided reuse
// ---------------------------------------------------------------------------

std::string to_string(ReuseMode m) { return m == ReuseMode::intra ? "intra" : "inter"; }

ReuseMode parse_reuse_mode(std::string_view s) {
    if (s == "intra" || s == "intra-cluster") return ReuseMode::intra;
    if (s == "inter" || s == "inter-cluster") return ReuseMode::inter;
    throw PreconditionError("reuse mode must be intra or inter, got '" + std::string(s) + "'");
}

std::vector<ReuseAssignment> plan_reuse(const ClusterManifest& manifest, ReuseMode mode) {
    std::map<int, std::size_t> proto;
    for (std::size_t i = 0; i < manifest.images.size(); ++i)
        if (manifest.images[i].is_prototype) proto[manifest.images[i].cluster] = i;
    std::vector<ReuseAssignment> plan;
    for (std::size_t i = 0; i < manifest.images.size(); ++i) {
        const auto& e = manifest.images[i];
        if (mode == ReuseMode::intra) {
            if (e.is_prototype) continue;
            const auto it = proto.find(e.cluster);
            if (it == proto.end()) throw FormatError("cluster " + std::to_string(e.cluster) + " has no prototype");
            plan.push_back({i, it->second});
        } else {
            std::vector<std::size_t> others;
            for (const auto& [c, p] : proto)
                if (c != e.cluster) others.push_back(p);
            std::sort(others.begin(), others.end());
            for (auto p : others) plan.push_back({i, p});
        }
    }
    return plan;
}

std::vector<ReuseResult> guided_reuse(const ClusterManifest& manifest, const std::map<std::string, TrainedModel>& models,
                                      ReuseMode mode, const PrepareFn& prepare,
                                      const SegmentationParamsFn& segmentation_params) {
    for (const auto& e : manifest.images) {
        if (e.is_prototype && !models.count(e.id)) {
            throw PreconditionError("missing model for prototype '" + e.id + "' of cluster " + std::to_string(e.cluster));
        }
    }
    for (const auto& [id, m] : models) {
        const auto* e = manifest.find(id);
        if (!e || !e->is_prototype) warn("model for '" + id + "' is ignored: not a prototype in this manifest");
    }
    const auto plan = plan_reuse(manifest, mode);
    // Group by target image so each image is preprocessed once per feature layout.
    std::vector<std::vector<std::size_t>> by_image(manifest.images.size());
    for (std::size_t k = 0; k < plan.size(); ++k) by_image[plan[k].image].push_back(k);
    std::vector<std::size_t> targets;
    for (std::size_t i = 0; i < by_image.size(); ++i)
        if (!by_image[i].empty()) targets.push_back(i);

    std::vector<ReuseResult> results(plan.size());
    parallel_for(targets.size(), [&](std::size_t t) {
        const std::size_t i = targets[t];
        const auto& entry = manifest.images[i];
        std::map<std::string, PreparedImage> prepared;
        for (auto k : by_image[i]) {
            const auto& proto = manifest.images[plan[k].prototype];
            const auto& model = models.at(proto.id);
            auto it = prepared.find(model.feature_config);
            if (it == prepared.end())
                it = prepared.emplace(model.feature_config, prepare(entry, FeatureConfig::parse(model.feature_config))).first;
            const auto& img = it->second;
            auto& r = results[k];
            r.image_id = entry.id;
            r.cluster = entry.cluster;
            r.model_source = proto.id;
            r.model_cluster = proto.cluster;
            r.probability = predict_proba(model, img.features);
            r.labels = run_pipeline(r.probability, img.seg, segmentation_params(img.seg));
        }
    });
    return results;
}

PrepareFn preprocessing_from_disk(const SlicParams& slic, std::uint64_t seed, Layout layout) {
    return [slic, seed, layout](const ManifestEntry& entry, const FeatureConfig& config) {
        const auto vol = load_volume(entry.path, layout);
        PreparedImage p;
        p.seg = generate_supervoxels(vol, slic, seed);
        p.features = compute_features(vol, p.seg, config);
        return p;
    };
}

// ---------------------------------------------------------------------------
// Dataset store
// ---------------------------------------------------------------------------

nlohmann::json DatasetState::to_json() const {
    nlohmann::json j{{"format", "svseg-dataset"}, {"version", 1}, {"id", id}, {"created_at", created_at}};
    auto& imgs = j["images"] = nlohmann::json::array();
    for (const auto& i : images) imgs.push_back({{"id", i.id}, {"path", i.path}});
    j["manifest"] = manifest ? nlohmann::json(*manifest) : nullptr;
    auto& pp = j["prototype_projects"] = nlohmann::json::object();
    for (const auto& [c, p] : prototype_projects) pp[std::to_string(c)] = p;
    return j;
}

DatasetState DatasetState::from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "svseg-dataset") throw FormatError("not a dataset file");
    DatasetState s;
    try {
        s.id = j.at("id").get<std::string>();
        s.created_at = j.value("created_at", "");
        for (const auto& i : j.at("images")) s.images.push_back({i.at("id").get<std::string>(), i.at("path").get<std::string>()});
        if (j.contains("manifest") && !j["manifest"].is_null()) s.manifest = j["manifest"].get<std::string>();
        if (j.contains("prototype_projects"))
            for (const auto& [c, p] : j["prototype_projects"].items()) s.prototype_projects[std::stoi(c)] = p.get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed dataset file: ") + e.what());
    }
    return s;
}

DatasetStore::DatasetStore(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_ / "datasets");
}

DatasetState DatasetStore::create(const std::string& id, const std::vector<std::filesystem::path>& images) {
    validate_id(id, "dataset");
    std::lock_guard lock(mu_);
    if (std::filesystem::exists(dir(id) / "dataset.json")) throw ConflictError("dataset '" + id + "' already exists");
    DatasetState s;
    s.id = id;
    s.images = dataset_images(images);
    for (const auto& img : s.images)
        if (!std::filesystem::exists(img.path)) throw PreconditionError("dataset image " + img.path + " does not exist");
    s.created_at = utc_timestamp();
    std::filesystem::create_directories(dir(id));
    write_file_atomic(dir(id) / "dataset.json", s.to_json().dump(2) + "\n");
    return s;
}

DatasetState DatasetStore::get(const std::string& id) const {
    validate_id(id, "dataset");
    std::lock_guard lock(mu_);
    const auto path = dir(id) / "dataset.json";
    if (!std::filesystem::exists(path)) throw NotFoundError("unknown dataset '" + id + "'");
    return DatasetState::from_json(nlohmann::json::parse(read_file_text(path)));
}

std::vector<std::string> DatasetStore::list() const {
    std::lock_guard lock(mu_);
    std::vector<std::string> ids;
    for (const auto& e : std::filesystem::directory_iterator(root_ / "datasets"))
        if (std::filesystem::exists(e.path() / "dataset.json")) ids.push_back(e.path().filename().string());
    std::sort(ids.begin(), ids.end());
    return ids;
}

void DatasetStore::save(const DatasetState& state) {
    for (const auto& [c, p] : state.prototype_projects) (void)c, validate_id(p, "project");
    std::lock_guard lock(mu_);
    write_file_atomic(dir(state.id) / "dataset.json", state.to_json().dump(2) + "\n");
}

ClusterManifest DatasetStore::manifest(const std::string& id) const {
    const auto s = get(id);
    if (!s.manifest) throw PreconditionError("cluster required");
    return load_manifest(dir(id) / *s.manifest);
}

void DatasetStore::save_manifest(const std::string& id, const ClusterManifest& m) {
    auto s = get(id);
    svseg::save_manifest(m, dir(id) / "manifest.json");
    s.manifest = "manifest.json";
    save(s);
}

}  // namespace svseg
