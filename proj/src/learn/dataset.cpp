#include "svseg/learn/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

namespace svseg {

// ---------------------------------------------------------------------------
// Strokes
// ---------------------------------------------------------------------------

namespace {

void check_coord(const VoxelCoord& c, const Dims& d) {
    if (!in_bounds(d, c)) {
        throw PreconditionError("stroke coordinate (" + std::to_string(c.x) + "," + std::to_string(c.y) + "," +
                                std::to_string(c.z) + ") outside volume " + to_string(d));
    }
}

void stamp(const VoxelCoord& c, double radius, std::optional<Axis> plane, const Dims& d,
           std::vector<std::size_t>& out) {
    const int r = static_cast<int>(std::floor(radius));
    const double r2 = radius * radius;
    int rx = r, ry = r, rz = d.z > 1 ? r : 0;
    if (plane == Axis::x) rx = 0;
    if (plane == Axis::y) ry = 0;
    if (plane == Axis::z) rz = 0;
    for (int dz = -rz; dz <= rz; ++dz)
        for (int dy = -ry; dy <= ry; ++dy)
            for (int dx = -rx; dx <= rx; ++dx) {
                if (dx * dx + dy * dy + dz * dz > r2) continue;
                const VoxelCoord p{c.x + dx, c.y + dy, c.z + dz};
                if (in_bounds(d, p)) out.push_back(linear_index(d, p));
            }
}

}  // namespace

std::vector<std::size_t> rasterize_stroke(const AnnotationStroke& stroke, const Dims& d) {
    if (stroke.class_label != 0 && stroke.class_label != 1) {
        throw PreconditionError("stroke class must be 0 (background) or 1 (foreground)");
    }
    if (!(stroke.radius >= 0.0)) throw PreconditionError("stroke radius must be >= 0");
    std::vector<std::size_t> out;
    if (!stroke.voxels.empty()) {
        for (const auto& c : stroke.voxels) {
            check_coord(c, d);
            out.push_back(linear_index(d, c));
        }
    } else {
        if (stroke.path.empty()) throw PreconditionError("stroke has neither a path nor voxels");
        for (const auto& c : stroke.path) check_coord(c, d);
        stamp(stroke.path.front(), stroke.radius, stroke.plane, d, out);
        for (std::size_t s = 1; s < stroke.path.size(); ++s) {
            const auto& a = stroke.path[s - 1];
            const auto& b = stroke.path[s];
            const int steps = std::max({std::abs(b.x - a.x), std::abs(b.y - a.y), std::abs(b.z - a.z)});
            for (int t = 1; t <= steps; ++t) {
                const double f = static_cast<double>(t) / steps;
                const VoxelCoord p{static_cast<int>(std::lround(a.x + f * (b.x - a.x))),
                                   static_cast<int>(std::lround(a.y + f * (b.y - a.y))),
                                   static_cast<int>(std::lround(a.z + f * (b.z - a.z)))};
                stamp(p, stroke.radius, stroke.plane, d, out);
            }
        }
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

Matrix Matrix::select_rows(std::span<const std::size_t> idx) const {
    Matrix m(idx.size(), cols);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(idx[r] * cols), cols,
                    m.values.begin() + static_cast<std::ptrdiff_t>(r * cols));
    }
    return m;
}

std::array<std::size_t, 2> Samples::class_counts() const {
    std::array<std::size_t, 2> c{0, 0};
    for (int v : y) ++c[static_cast<std::size_t>(v)];
    return c;
}

Samples Samples::subset(std::span<const std::size_t> idx) const {
    Samples s;
    s.x = x.select_rows(idx);
    s.y.reserve(idx.size());
    for (auto i : idx) s.y.push_back(y[i]);
    return s;
}

void require_both_classes(const std::array<std::size_t, 2>& counts) {
    if (counts[0] == 0 || counts[1] == 0) {
        throw SingleClassError("training data must contain both classes (background: " + std::to_string(counts[0]) +
                               ", foreground: " + std::to_string(counts[1]) + ")");
    }
}

TrainingDatabase collect_training_data(const std::vector<AnnotationStroke>& strokes, const Oversegmentation& seg,
                                       const FeatureMatrix& features) {
    if (strokes.empty()) throw PreconditionError("no annotation strokes");
    if (features.rows() != seg.size()) {
        throw DimensionMismatchError("feature matrix has " + std::to_string(features.rows()) + " rows but segmentation has " +
                                     std::to_string(seg.size()) + " supervoxels");
    }
    std::map<std::uint32_t, int> label_of;
    for (const auto& s : strokes) {
        for (auto voxel : rasterize_stroke(s, seg.dims())) label_of[seg.label_at(voxel)] = s.class_label;
    }
    TrainingDatabase db;
    db.layout_hash = features.layout_hash();
    db.samples.x = Matrix(label_of.size(), features.cols());
    std::size_t r = 0;
    for (const auto& [id, label] : label_of) {
        db.supervoxel_ids.push_back(id);
        db.samples.y.push_back(label);
        const auto src = features.row(id);
        std::copy(src.begin(), src.end(), db.samples.x.row(r).begin());
        ++r;
    }
    require_both_classes(db.class_counts());
    return db;
}

// ---------------------------------------------------------------------------
// Database file
// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace

std::string format_training_database(const TrainingDatabase& db) {
    std::ostringstream os;
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(db.layout_hash));
    os << "# svseg training database v1 layout_hash=" << hash << " row_length=" << db.samples.x.cols << "\n";
    os << "supervoxel_id,label";
    for (std::size_t c = 0; c < db.samples.x.cols; ++c) os << ",f" << c;
    os << "\n";
    for (std::size_t r = 0; r < db.size(); ++r) {
        os << db.supervoxel_ids[r] << "," << db.samples.y[r];
        for (double v : db.samples.x.row(r)) os << "," << fmt(v);
        os << "\n";
    }
    return os.str();
}

TrainingDatabase parse_training_database(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw FormatError("training database: empty file");
    unsigned long long hash = 0;
    std::size_t cols = 0;
    if (std::sscanf(line.c_str(), "# svseg training database v1 layout_hash=%llx row_length=%zu", &hash, &cols) != 2) {
        throw FormatError("training database: bad header line");
    }
    if (!std::getline(is, line) || line.rfind("supervoxel_id,label", 0) != 0) {
        throw FormatError("training database: missing column header");
    }
    TrainingDatabase db;
    db.layout_hash = hash;
    db.samples.x.cols = cols;
    std::size_t lineno = 2;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ls(line);
        std::string f;
        while (std::getline(ls, f, ',')) fields.push_back(f);
        if (fields.size() != cols + 2) {
            throw FormatError("training database line " + std::to_string(lineno) + ": expected " +
                              std::to_string(cols + 2) + " fields");
        }
        try {
            db.supervoxel_ids.push_back(static_cast<std::uint32_t>(std::stoul(fields[0])));
            const int label = std::stoi(fields[1]);
            if (label != 0 && label != 1) throw FormatError("label must be 0 or 1");
            db.samples.y.push_back(label);
            for (std::size_t c = 0; c < cols; ++c) db.samples.x.values.push_back(std::stod(fields[c + 2]));
        } catch (const std::logic_error&) {
            throw FormatError("training database line " + std::to_string(lineno) + ": malformed number");
        }
    }
    db.samples.x.rows = db.samples.y.size();
    return db;
}

void save_training_database(const TrainingDatabase& db, const std::filesystem::path& path) {
    write_file_atomic(path, format_training_database(db));
}

TrainingDatabase load_training_database(const std::filesystem::path& path) {
    return parse_training_database(read_file_text(path));
}

// ---------------------------------------------------------------------------
// Splits and folds
// ---------------------------------------------------------------------------

namespace {

std::array<std::vector<std::size_t>, 2> shuffled_by_class(std::span<const int> labels, std::uint64_t seed) {
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    for (std::size_t c = 0; c < 2; ++c) {
        Rng rng(derive_seed(seed, 0x5917, c));
        rng.shuffle(by_class[c]);
    }
    return by_class;
}

}  // namespace

Split stratified_split(std::span<const int> labels, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw PreconditionError("train fraction must be in (0, 1)");
    auto by_class = shuffled_by_class(labels, seed);
    Split s;
    for (std::size_t c = 0; c < 2; ++c) {
        const auto& idx = by_class[c];
        if (idx.size() < 2) {
            throw PreconditionError("stratified split needs at least 2 rows per class; class " + std::to_string(c) +
                                    " has " + std::to_string(idx.size()));
        }
        const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(idx.size()) + 0.5));
        s.train.insert(s.train.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
        s.test.insert(s.test.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
    }
    std::sort(s.train.begin(), s.train.end());
    std::sort(s.test.begin(), s.test.end());
    return s;
}

std::vector<int> stratified_folds(std::span<const int> labels, int k, std::uint64_t seed) {
    const auto by_class = shuffled_by_class(labels, derive_seed(seed, 0xF01D));
    std::vector<int> fold(labels.size(), 0);
    // Continue the round robin across classes so fold sizes stay balanced.
    std::size_t next = 0;
    for (const auto& idx : by_class) {
        for (auto i : idx) fold[i] = static_cast<int>(next++ % static_cast<std::size_t>(k));
    }
    return fold;
}

int choose_fold_count(const std::array<std::size_t, 2>& counts) {
    const std::size_t smallest = std::min(counts[0], counts[1]);
    if (smallest >= 5) return 5;
    if (smallest >= 3) {
        warn("a class has fewer than 5 samples; using 3-fold cross-validation");
        return 3;
    }
    throw PreconditionError("cross-validation needs at least 3 samples per class; smallest class has " +
                            std::to_string(smallest));
}

// ---------------------------------------------------------------------------
// Scaling and weights
// ---------------------------------------------------------------------------

Scaler Scaler::fit(const Matrix& x) {
    if (x.rows == 0) throw PreconditionError("cannot fit a scaler on zero rows");
    Scaler s;
    s.mean_.assign(x.cols, 0.0);
    s.scale_.assign(x.cols, 0.0);
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t c = 0; c < x.cols; ++c) s.mean_[c] += x.at(r, c);
    for (auto& m : s.mean_) m /= static_cast<double>(x.rows);
    for (std::size_t r = 0; r < x.rows; ++r)
        for (std::size_t c = 0; c < x.cols; ++c) {
            const double d = x.at(r, c) - s.mean_[c];
            s.scale_[c] += d * d;
        }
    for (auto& v : s.scale_) {
        v = std::sqrt(v / static_cast<double>(x.rows));
        if (!(v > 0.0)) v = 1.0;
    }
    return s;
}

Scaler Scaler::from_parts(std::vector<double> mean, std::vector<double> scale) {
    if (mean.size() != scale.size()) throw FormatError("scaler mean and scale lengths differ");
    Scaler s;
    s.mean_ = std::move(mean);
    s.scale_ = std::move(scale);
    return s;
}

void Scaler::transform_row(std::span<const double> in, std::span<double> out) const {
    if (in.size() != mean_.size()) throw DimensionMismatchError("scaler width does not match row length");
    for (std::size_t c = 0; c < in.size(); ++c) out[c] = (in[c] - mean_[c]) / scale_[c];
}

Matrix Scaler::transform(const Matrix& x) const {
    Matrix out(x.rows, x.cols);
    for (std::size_t r = 0; r < x.rows; ++r) transform_row(x.row(r), out.row(r));
    return out;
}

std::array<double, 2> class_weights(std::span<const int> labels) {
    std::array<double, 2> counts{0, 0};
    for (int v : labels) counts[static_cast<std::size_t>(v)] += 1;
    const double n = static_cast<double>(labels.size());
    std::array<double, 2> w{0, 0};
    for (std::size_t c = 0; c < 2; ++c) w[c] = counts[c] > 0 ? n / (2.0 * counts[c]) : 0.0;
    return w;
}

void require_finite(const Matrix& x) {
    for (std::size_t i = 0; i < x.values.size(); ++i) {
        if (!std::isfinite(x.values[i])) {
            throw PreconditionError("non-finite feature value at row " + std::to_string(i / std::max<std::size_t>(1, x.cols)) +
                                    ", column " + std::to_string(i % std::max<std::size_t>(1, x.cols)));
        }
    }
}

}  // namespace svseg
