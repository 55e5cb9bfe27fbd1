#include "svseg/workbench/config.hpp"

#include <charconv>
#include <cstdlib>
#include <sstream>

namespace svseg {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || res.ec != std::errc{} || res.ptr != v.data() + v.size()) {
        throw FormatError("config key '" + key + "': '" + v + "' is not a valid number");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw FormatError("config key '" + key + "': expected true/false, got '" + v + "'");
}

}  // namespace

void WorkbenchConfig::set(const std::string& key, const std::string& value) {
    const std::string& v = value;
    if (key == "target_size") target_size = parse_number<int>(key, v);
    else if (key == "slic_iterations") slic_iterations = parse_number<int>(key, v);
    else if (key == "features") features = v;
    else if (key == "slic_seed") slic_seed = parse_number<std::uint64_t>(key, v);
    else if (key == "classifier") classifier = v;
    else if (key == "optimize") optimize = parse_bool(key, v);
    else if (key == "calibration") calibration = v;
    else if (key == "n_trees") n_trees = parse_number<int>(key, v);
    else if (key == "search_iterations") search_iterations = parse_number<int>(key, v);
    else if (key == "train_seed") train_seed = parse_number<std::uint64_t>(key, v);
    else if (key == "threshold") threshold = parse_number<double>(key, v);
    else if (key == "min_object_supervoxels") min_object_supervoxels = parse_number<double>(key, v);
    else if (key == "max_hole_supervoxels") max_hole_supervoxels = parse_number<double>(key, v);
    else if (key == "smooth_radius") smooth_radius = parse_number<int>(key, v);
    else if (key == "watershed") watershed = parse_bool(key, v);
    else if (key == "watershed_h") watershed_h = parse_number<double>(key, v);
    else if (key == "k_c") k_c = parse_number<int>(key, v);
    else if (key == "k_i") k_i = parse_number<int>(key, v);
    else if (key == "color_sort") color_sort = v;
    else if (key == "cluster_seed") cluster_seed = parse_number<std::uint64_t>(key, v);
    else if (key == "seed") slic_seed = train_seed = cluster_seed = parse_number<std::uint64_t>(key, v);
    else throw FormatError("unknown config key '" + key + "'");
}

WorkbenchConfig WorkbenchConfig::parse(const std::string& text) {
    WorkbenchConfig c;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw FormatError("config line " + std::to_string(lineno) + ": expected key = value");
        try {
            c.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        } catch (const FormatError& e) {
            throw FormatError("config line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    // Surface invalid combinations at load time rather than at first use.
    (void)c.feature_config();
    (void)c.classifier_spec();
    (void)c.palette_params();
    return c;
}

WorkbenchConfig WorkbenchConfig::load(const std::filesystem::path& path) { return parse(read_file_text(path)); }

std::string WorkbenchConfig::format() const {
    std::ostringstream o;
    o.precision(17);
    o << "target_size = " << target_size << "\n"
      << "slic_iterations = " << slic_iterations << "\n"
      << "features = " << features << "\n"
      << "slic_seed = " << slic_seed << "\n"
      << "classifier = " << classifier << "\n"
      << "optimize = " << (optimize ? "true" : "false") << "\n"
      << "calibration = " << calibration << "\n"
      << "n_trees = " << n_trees << "\n"
      << "search_iterations = " << search_iterations << "\n"
      << "train_seed = " << train_seed << "\n"
      << "threshold = " << threshold << "\n"
      << "min_object_supervoxels = " << min_object_supervoxels << "\n"
      << "max_hole_supervoxels = " << max_hole_supervoxels << "\n"
      << "smooth_radius = " << smooth_radius << "\n"
      << "watershed = " << (watershed ? "true" : "false") << "\n"
      << "watershed_h = " << watershed_h << "\n"
      << "k_c = " << k_c << "\n"
      << "k_i = " << k_i << "\n"
      << "color_sort = " << color_sort << "\n"
      << "cluster_seed = " << cluster_seed << "\n";
    return o.str();
}

SlicParams WorkbenchConfig::slic_params() const {
    if (target_size < 1) throw PreconditionError("target_size must be >= 1");
    if (slic_iterations < 1) throw PreconditionError("slic_iterations must be >= 1");
    SlicParams p;
    p.target_size = target_size;
    p.max_iterations = slic_iterations;
    return p;
}

FeatureConfig WorkbenchConfig::feature_config() const { return FeatureConfig::from_categories(features); }

ClassifierSpec WorkbenchConfig::classifier_spec() const {
    ClassifierSpec s;
    s.family = parse_family(classifier);
    s.calibration = parse_calibration(calibration);
    s.optimize = optimize;
    if (n_trees < 1) throw PreconditionError("n_trees must be >= 1");
    s.forest.n_trees = n_trees;
    if (search_iterations < 1) throw PreconditionError("search_iterations must be >= 1");
    s.search_iterations = search_iterations;
    s.seed = train_seed;
    return s;
}

SegmentationParams WorkbenchConfig::segmentation_params(const Oversegmentation& seg) const {
    if (min_object_supervoxels < 0 || max_hole_supervoxels < 0) {
        throw PreconditionError("post-filter sizes must be non-negative");
    }
    SegmentationParams p;
    p.threshold = threshold;
    p.min_object_size = supervoxel_multiple(seg, min_object_supervoxels);
    p.max_hole_size = supervoxel_multiple(seg, max_hole_supervoxels);
    p.smooth_radius = smooth_radius;
    p.watershed = watershed;
    p.watershed_h = watershed_h;
    p.validate();
    return p;
}

PaletteParams WorkbenchConfig::palette_params() const {
    if (k_c < 1) throw PreconditionError("k_c must be >= 1");
    if (k_i < 1) throw PreconditionError("k_i must be >= 1");
    PaletteParams p;
    p.k_c = k_c;
    if (color_sort == "per_channel") p.sort = ColorSort::per_channel;
    else if (color_sort == "lexicographic") p.sort = ColorSort::lexicographic;
    else throw PreconditionError("color_sort must be per_channel or lexicographic, got '" + color_sort + "'");
    return p;
}

WorkbenchConfig load_default_config(const std::filesystem::path& root) {
    if (const char* env = std::getenv("SVSEG_CONFIG"); env && *env) return WorkbenchConfig::load(env);
    const auto local = root / "svseg.conf";
    if (!root.empty() && std::filesystem::exists(local)) return WorkbenchConfig::load(local);
    return {};
}

}  // namespace svseg
