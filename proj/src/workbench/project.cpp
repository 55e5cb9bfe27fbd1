#include "svseg/workbench/project.hpp"

#include <chrono>
#include <cstdlib>
#include <ctime>

namespace svseg {

void validate_id(const std::string& id, const char* what) {
    const bool ok = !id.empty() && id.size() <= 64 && std::all_of(id.begin(), id.end(), [](char c) {
        return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    });
    if (!ok) throw PreconditionError(std::string(what) + " id '" + id + "' must match [A-Za-z0-9_-]{1,64}");
}

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

// ---------------------------------------------------------------------------
// Wire formats
// ---------------------------------------------------------------------------

namespace {

nlohmann::json coord_json(const VoxelCoord& c) { return nlohmann::json::array({c.x, c.y, c.z}); }

VoxelCoord coord_from(const nlohmann::json& j) {
    if (!j.is_array() || (j.size() != 2 && j.size() != 3)) throw FormatError("coordinate must be [x, y] or [x, y, z]");
    for (const auto& v : j)
        if (!v.is_number_integer()) throw FormatError("coordinates must be integers");
    return {j[0].get<int>(), j[1].get<int>(), j.size() == 3 ? j[2].get<int>() : 0};
}

const char* axis_name(Axis a) { return a == Axis::x ? "x" : a == Axis::y ? "y" : "z"; }

const char* layout_name(Layout l) { return l == Layout::single_image ? "single_image" : "slice_stack"; }

Layout parse_layout(const std::string& s) {
    if (s == "single_image") return Layout::single_image;
    if (s == "slice_stack") return Layout::slice_stack;
    throw FormatError("unknown layout '" + s + "'");
}

template <class T>
std::optional<T> opt_get(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j[key].is_null()) return std::nullopt;
    return j[key].get<T>();
}

}  // namespace

nlohmann::json stroke_to_json(const AnnotationStroke& s) {
    nlohmann::json j{{"class", s.class_label}, {"radius", s.radius}};
    auto& path = j["path"] = nlohmann::json::array();
    for (const auto& c : s.path) path.push_back(coord_json(c));
    if (!s.voxels.empty()) {
        auto& vox = j["voxels"] = nlohmann::json::array();
        for (const auto& c : s.voxels) vox.push_back(coord_json(c));
    }
    if (s.plane) j["plane"] = axis_name(*s.plane);
    return j;
}

AnnotationStroke stroke_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw FormatError("stroke must be an object");
    AnnotationStroke s;
    try {
        if (!j.contains("class")) throw FormatError("stroke is missing 'class'");
        const auto& cls = j["class"];
        if (cls.is_string()) {
            const auto name = cls.get<std::string>();
            if (name == "foreground") s.class_label = 1;
            else if (name == "background") s.class_label = 0;
            else throw FormatError("stroke class must be 0, 1, 'background' or 'foreground'");
        } else {
            s.class_label = cls.get<int>();
        }
        s.radius = j.value("radius", 0.0);
        if (j.contains("path"))
            for (const auto& c : j["path"]) s.path.push_back(coord_from(c));
        if (j.contains("voxels"))
            for (const auto& c : j["voxels"]) s.voxels.push_back(coord_from(c));
        if (j.contains("plane") && !j["plane"].is_null()) s.plane = parse_axis(j["plane"].get<std::string>());
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed stroke: ") + e.what());
    } catch (const PreconditionError& e) {
        throw FormatError(std::string("malformed stroke: ") + e.what());
    }
    if (s.path.empty() && s.voxels.empty()) throw FormatError("stroke needs a non-empty 'path' or 'voxels'");
    return s;
}

std::string format_strokes(const std::vector<AnnotationStroke>& strokes) {
    nlohmann::json j{{"format", "svseg-strokes"}, {"version", 1}};
    auto& arr = j["strokes"] = nlohmann::json::array();
    for (const auto& s : strokes) arr.push_back(stroke_to_json(s));
    return j.dump(1) + "\n";
}

std::vector<AnnotationStroke> parse_strokes(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("stroke file is not valid JSON: ") + e.what());
    }
    const nlohmann::json* arr = &j;
    if (j.is_object()) {
        if (j.value("format", "") != "svseg-strokes") throw FormatError("stroke file has an unknown format tag");
        if (j.value("version", 0) != 1) throw FormatError("unsupported stroke file version");
        if (!j.contains("strokes")) throw FormatError("stroke file lacks 'strokes'");
        arr = &j["strokes"];
    }
    if (!arr->is_array()) throw FormatError("strokes must be a JSON array");
    std::vector<AnnotationStroke> out;
    for (const auto& s : *arr) out.push_back(stroke_from_json(s));
    return out;
}

nlohmann::json segmentation_params_to_json(const SegmentationParams& p) {
    return {{"threshold", p.threshold},         {"min_object_size", p.min_object_size},
            {"max_hole_size", p.max_hole_size}, {"smooth_radius", p.smooth_radius},
            {"watershed", p.watershed},         {"watershed_h", p.watershed_h}};
}

SegmentationParams segmentation_params_from_json(const nlohmann::json& j, const SegmentationParams& base) {
    if (!j.is_object()) throw FormatError("segmentation params must be an object");
    SegmentationParams p = base;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "threshold") p.threshold = value.get<double>();
            else if (key == "min_object_size") p.min_object_size = value.get<std::size_t>();
            else if (key == "max_hole_size") p.max_hole_size = value.get<std::size_t>();
            else if (key == "smooth_radius") p.smooth_radius = value.get<int>();
            else if (key == "watershed") p.watershed = value.get<bool>();
            else if (key == "watershed_h") p.watershed_h = value.get<double>();
            else throw FormatError("unknown segmentation parameter '" + key + "'");
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed segmentation params: ") + e.what());
    }
    p.validate();
    return p;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

nlohmann::json ProjectState::to_json() const {
    nlohmann::json j{{"format", "svseg-project"},
                     {"version", 1},
                     {"id", id},
                     {"image", image},
                     {"layout", layout_name(layout)},
                     {"dims", {dims.x, dims.y, dims.z}},
                     {"generation", generation},
                     {"target_size", target_size},
                     {"slic_iterations", slic_iterations},
                     {"slic_seed", slic_seed},
                     {"feature_config", feature_config},
                     {"supervoxel_count", supervoxel_count},
                     {"stroke_count", stroke_count},
                     {"segmentation_params", segmentation_params_to_json(segmentation_params)},
                     {"created_at", created_at}};
    auto put = [&](const char* key, const std::optional<std::string>& v) { j[key] = v ? nlohmann::json(*v) : nullptr; };
    auto& a = j["artifacts"] = nlohmann::json::object();
    auto puta = [&](const char* key, const std::optional<std::string>& v) { a[key] = v ? nlohmann::json(*v) : nullptr; };
    puta("supervoxels", supervoxels);
    puta("features", features);
    puta("model", model);
    puta("probability", probability);
    puta("segmentation", segmentation);
    auto stamp = [&](const char* key, const std::string& v) { put(key, v.empty() ? std::nullopt : std::optional(v)); };
    stamp("preprocessed_at", preprocessed_at);
    stamp("trained_at", trained_at);
    stamp("predicted_at", predicted_at);
    stamp("segmented_at", segmented_at);
    return j;
}

ProjectState ProjectState::from_json(const nlohmann::json& j) {
    if (j.value("format", "") != "svseg-project") throw FormatError("not a project manifest");
    if (j.value("version", 0) != 1) throw FormatError("unsupported project manifest version");
    ProjectState s;
    try {
        s.id = j.at("id").get<std::string>();
        s.image = j.at("image").get<std::string>();
        s.layout = parse_layout(j.at("layout").get<std::string>());
        const auto& d = j.at("dims");
        s.dims = {d.at(0).get<int>(), d.at(1).get<int>(), d.at(2).get<int>()};
        s.generation = j.at("generation").get<int>();
        s.target_size = j.value("target_size", 0);
        s.slic_iterations = j.value("slic_iterations", 0);
        s.slic_seed = j.value("slic_seed", std::uint64_t{0});
        s.feature_config = j.value("feature_config", "");
        s.supervoxel_count = j.value("supervoxel_count", std::size_t{0});
        s.stroke_count = j.value("stroke_count", std::size_t{0});
        if (j.contains("segmentation_params")) s.segmentation_params = segmentation_params_from_json(j["segmentation_params"]);
        const auto& a = j.at("artifacts");
        s.supervoxels = opt_get<std::string>(a, "supervoxels");
        s.features = opt_get<std::string>(a, "features");
        s.model = opt_get<std::string>(a, "model");
        s.probability = opt_get<std::string>(a, "probability");
        s.segmentation = opt_get<std::string>(a, "segmentation");
        s.created_at = j.value("created_at", "");
        s.preprocessed_at = opt_get<std::string>(j, "preprocessed_at").value_or("");
        s.trained_at = opt_get<std::string>(j, "trained_at").value_or("");
        s.predicted_at = opt_get<std::string>(j, "predicted_at").value_or("");
        s.segmented_at = opt_get<std::string>(j, "segmented_at").value_or("");
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("malformed project manifest: ") + e.what());
    }
    if (s.features && !s.supervoxels) throw FormatError("project manifest lists features without supervoxels");
    if (s.probability && !s.model) throw FormatError("project manifest lists a probability map without a model");
    if (s.segmentation && !s.probability) throw FormatError("project manifest lists a segmentation without probabilities");
    return s;
}

// ---------------------------------------------------------------------------
// Project
// ---------------------------------------------------------------------------

namespace {

constexpr const char* kManifest = "project.json";
constexpr const char* kStrokes = "strokes.json";

void write_manifest(const std::filesystem::path& dir, const ProjectState& s) {
    write_file_atomic(dir / kManifest, s.to_json().dump(2) + "\n");
}

void remove_quietly(const std::filesystem::path& p) {
    std::error_code ec;
    std::filesystem::remove(p, ec);
}

}  // namespace

std::shared_ptr<Project> Project::create(const std::filesystem::path& dir, const std::string& id,
                                         const std::filesystem::path& image, Layout layout) {
    validate_id(id, "project");
    if (std::filesystem::exists(dir / kManifest)) throw ConflictError("project '" + id + "' already exists");
    const auto abs = std::filesystem::absolute(image);
    const RasterVolume vol = load_volume(abs, layout);
    std::filesystem::create_directories(dir);
    ProjectState s;
    s.id = id;
    s.image = abs.string();
    s.layout = layout;
    s.dims = vol.dims();
    s.created_at = utc_timestamp();
    write_file_atomic(dir / kStrokes, format_strokes({}));
    write_manifest(dir, s);
    return std::shared_ptr<Project>(new Project(dir, s));
}

std::shared_ptr<Project> Project::open(const std::filesystem::path& dir) {
    if (!std::filesystem::exists(dir / kManifest)) {
        throw NotFoundError("no project at " + dir.string() + " (missing " + kManifest + ")");
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file_text(dir / kManifest));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("project manifest " + (dir / kManifest).string() + " is not valid JSON: " + e.what());
    }
    return std::shared_ptr<Project>(new Project(dir, ProjectState::from_json(j)));
}

ProjectState Project::state() const {
    std::lock_guard lock(mu_);
    return state_;
}

void Project::commit(const std::function<void(ProjectState&)>& change) {
    std::vector<std::string> stale;
    {
        std::lock_guard lock(mu_);
        ProjectState next = state_;
        change(next);
        write_manifest(dir_, next);
        for (auto field : {&ProjectState::supervoxels, &ProjectState::features, &ProjectState::model,
                                  &ProjectState::probability, &ProjectState::segmentation}) {
            const auto& before = state_.*field;
            if (before && before != next.*field) stale.push_back(*before);
        }
        state_ = std::move(next);
    }
    for (const auto& name : stale) remove_quietly(dir_ / name);
}

std::string Project::next_name(const std::string& stem, const std::string& ext) {
    std::lock_guard lock(mu_);
    // Reserve the generation in memory only; it is persisted with the commit.
    return stem + ".g" + std::to_string(++state_.generation) + ext;
}

std::filesystem::path Project::artifact_path(const std::optional<std::string>& name, const char* step) const {
    if (!name) throw PreconditionError(std::string(step) + " required");
    return dir_ / *name;
}

RasterVolume Project::load_image() const {
    const auto s = state();
    auto vol = load_volume(s.image, s.layout);
    if (vol.dims() != s.dims) {
        throw DimensionMismatchError("image " + s.image + " now has dims " + to_string(vol.dims()) + ", project expects " +
                                     to_string(s.dims));
    }
    return vol;
}

Oversegmentation Project::load_supervoxels() const { return load_oversegmentation(artifact_path(state().supervoxels, "preprocess")); }
FeatureMatrix Project::load_features() const { return svseg::load_features(artifact_path(state().features, "preprocess")); }
TrainedModel Project::load_model() const { return svseg::load_model(artifact_path(state().model, "train")); }
ProbabilityMap Project::load_probability() const {
    return load_probability_map(artifact_path(state().probability, "predict"));
}
LabelImage Project::load_segmentation() const {
    return read_colorized_labels(artifact_path(state().segmentation, "segment"));
}

std::vector<AnnotationStroke> Project::strokes() const {
    std::lock_guard lock(mu_);
    return parse_strokes(read_file_text(dir_ / kStrokes));
}

void Project::require_preprocessed() const {
    const auto s = state();
    if (!s.supervoxels || !s.features) throw PreconditionError("preprocess required");
}

void Project::require_trainable() const {
    require_preprocessed();
    const auto list = strokes();
    if (list.empty()) throw PreconditionError("annotation strokes required before training");
    const auto seg = load_supervoxels();
    // Cheap class check on the stroke log without building features.
    std::array<std::size_t, 2> counts{0, 0};
    std::vector<int> label(seg.size(), -1);
    for (const auto& st : list)
        for (auto v : rasterize_stroke(st, seg.dims())) label[seg.label_at(v)] = st.class_label;
    for (int l : label)
        if (l >= 0) counts[static_cast<std::size_t>(l)]++;
    require_both_classes(counts);
}

void Project::require_model() const {
    require_preprocessed();
    if (!state().model) throw PreconditionError("train required");
}

void Project::require_probability() const {
    if (!state().probability) throw PreconditionError("predict required");
}

void Project::preprocess(const SlicParams& slic, const FeatureConfig& features, std::uint64_t seed,
                         const ProgressFn& progress) {
    features.validate();
    const auto vol = load_image();
    if (progress) progress(0.05);
    const auto seg = generate_supervoxels(vol, slic, seed);
    if (progress) progress(0.5);
    const auto fm = compute_features(vol, seg, features);
    if (progress) progress(0.9);
    const auto svox = next_name("supervoxels", ".svox");
    const auto svft = next_name("features", ".svft");
    save_oversegmentation(seg, dir_ / svox);
    save_features(fm, dir_ / svft);
    const auto now = utc_timestamp();
    commit([&](ProjectState& s) {
        s.supervoxels = svox;
        s.features = svft;
        s.target_size = slic.target_size;
        s.slic_iterations = slic.max_iterations;
        s.slic_seed = seed;
        s.feature_config = features.canonical();
        s.supervoxel_count = seg.size();
        s.probability.reset();
        s.segmentation.reset();
        s.preprocessed_at = now;
        s.predicted_at.clear();
        s.segmented_at.clear();
        s.generation = std::max(s.generation, state_.generation);
    });
    if (progress) progress(1.0);
}

std::size_t Project::add_stroke(const AnnotationStroke& stroke) {
    rasterize_stroke(stroke, state().dims);  // bounds, radius and class checks
    std::size_t count = 0;
    {
        std::lock_guard lock(mu_);
        auto list = parse_strokes(read_file_text(dir_ / kStrokes));
        list.push_back(stroke);
        write_file_atomic(dir_ / kStrokes, format_strokes(list));
        count = list.size();
    }
    commit([&](ProjectState& s) { s.stroke_count = count; });
    return count;
}

AnnotationStroke Project::undo_stroke() {
    AnnotationStroke last;
    std::size_t count = 0;
    {
        std::lock_guard lock(mu_);
        auto list = parse_strokes(read_file_text(dir_ / kStrokes));
        if (list.empty()) throw PreconditionError("no strokes to undo");
        last = list.back();
        list.pop_back();
        write_file_atomic(dir_ / kStrokes, format_strokes(list));
        count = list.size();
    }
    commit([&](ProjectState& s) { s.stroke_count = count; });
    return last;
}

void Project::replace_strokes(const std::vector<AnnotationStroke>& strokes) {
    const auto dims = state().dims;
    for (const auto& st : strokes) rasterize_stroke(st, dims);
    {
        std::lock_guard lock(mu_);
        write_file_atomic(dir_ / kStrokes, format_strokes(strokes));
    }
    commit([&](ProjectState& s) { s.stroke_count = strokes.size(); });
}

TrainedModel Project::train(const ClassifierSpec& spec, const ProgressFn& progress) {
    require_preprocessed();
    const auto seg = load_supervoxels();
    const auto fm = load_features();
    const auto db = collect_training_data(strokes(), seg, fm);
    if (progress) progress(0.1);
    auto model = train_model(spec, db, fm.config());
    if (progress) progress(0.9);
    const auto name = next_name("model", ".svmd");
    save_model(model, dir_ / name);
    save_training_database(db, dir_ / "training.csv");
    const auto now = utc_timestamp();
    commit([&](ProjectState& s) {
        s.model = name;
        s.probability.reset();
        s.segmentation.reset();
        s.trained_at = now;
        s.predicted_at.clear();
        s.segmented_at.clear();
        s.generation = std::max(s.generation, state_.generation);
    });
    if (progress) progress(1.0);
    return model;
}

void Project::import_model(const TrainedModel& model) {
    const auto s = state();
    if (s.features) {
        const auto fm = load_features();
        if (fm.layout_hash() != model.layout_hash || fm.cols() != model.row_length) {
            throw LayoutMismatchError("model feature layout (" + model.feature_config + ") does not match the project's (" +
                                      s.feature_config + ")");
        }
    }
    const auto name = next_name("model", ".svmd");
    save_model(model, dir_ / name);
    const auto now = utc_timestamp();
    commit([&](ProjectState& st) {
        st.model = name;
        st.probability.reset();
        st.segmentation.reset();
        st.trained_at = now;
        st.generation = std::max(st.generation, state_.generation);
    });
}

ProbabilityMap Project::predict(const ProgressFn& progress) {
    require_model();
    const auto model = load_model();
    const auto fm = load_features();
    if (progress) progress(0.1);
    auto prob = predict_proba(model, fm);
    const auto name = next_name("probability", ".svpm");
    save_probability_map(prob, dir_ / name);
    const auto now = utc_timestamp();
    commit([&](ProjectState& s) {
        s.probability = name;
        s.segmentation.reset();
        s.predicted_at = now;
        s.segmented_at.clear();
        s.generation = std::max(s.generation, state_.generation);
    });
    if (progress) progress(1.0);
    return prob;
}

LabelImage Project::segment(const SegmentationParams& params, const ProgressFn& progress) {
    params.validate();
    require_probability();
    const auto seg = load_supervoxels();
    const auto prob = load_probability();
    if (progress) progress(0.1);
    auto labels = run_pipeline(prob, seg, params);
    const auto name = next_name("segmentation", state().dims.z > 1 ? ".tif" : ".png");
    write_label_image(labels, dir_ / name, LabelWriteMode::colorized);
    const auto now = utc_timestamp();
    commit([&](ProjectState& s) {
        s.segmentation = name;
        s.segmentation_params = params;
        s.segmented_at = now;
        s.generation = std::max(s.generation, state_.generation);
    });
    if (progress) progress(1.0);
    return labels;
}

void Project::set_segmentation_params(const SegmentationParams& params) {
    params.validate();
    commit([&](ProjectState& s) { s.segmentation_params = params; });
}

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

ProjectStore::ProjectStore(std::filesystem::path root) : root_(std::move(root)) {
    std::filesystem::create_directories(root_ / "projects");
}

std::shared_ptr<Project> ProjectStore::create(const std::string& id, const std::filesystem::path& image, Layout layout) {
    validate_id(id, "project");
    std::lock_guard lock(mu_);
    auto p = Project::create(root_ / "projects" / id, id, image, layout);
    open_[id] = p;
    return p;
}

std::shared_ptr<Project> ProjectStore::get(const std::string& id) {
    validate_id(id, "project");
    std::lock_guard lock(mu_);
    if (auto it = open_.find(id); it != open_.end()) return it->second;
    const auto dir = root_ / "projects" / id;
    if (!std::filesystem::exists(dir / kManifest)) throw NotFoundError("unknown project '" + id + "'");
    auto p = Project::open(dir);
    open_[id] = p;
    return p;
}

bool ProjectStore::exists(const std::string& id) {
    std::lock_guard lock(mu_);
    return open_.count(id) || std::filesystem::exists(root_ / "projects" / id / kManifest);
}

std::vector<std::string> ProjectStore::list() {
    std::vector<std::string> ids;
    for (const auto& e : std::filesystem::directory_iterator(root_ / "projects"))
        if (e.is_directory() && std::filesystem::exists(e.path() / kManifest)) ids.push_back(e.path().filename().string());
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::filesystem::path default_project_root() {
    if (const char* env = std::getenv("SVSEG_PROJECT_ROOT"); env && *env) return env;
    return std::filesystem::current_path() / "svseg-projects";
}

}  // namespace svseg
