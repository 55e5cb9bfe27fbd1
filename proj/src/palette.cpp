#include "svseg/palette.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <set>

namespace svseg {

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
    double s = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return s;
}

/// Nearest center, lowest index on ties.
std::pair<int, double> nearest(const Matrix& centers, std::span<const double> p) {
    int best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < centers.rows; ++c) {
        const double d = sq_dist(centers.row(c), p);
        if (d < bd) {
            bd = d;
            best = static_cast<int>(c);
        }
    }
    return {best, bd};
}

Matrix kmeans_pp(const Matrix& points, int k, Rng& rng) {
    const std::size_t n = points.rows;
    Matrix centers(static_cast<std::size_t>(k), points.cols);
    auto put = [&](int c, std::size_t i) {
        auto dst = centers.row(static_cast<std::size_t>(c));
        const auto src = points.row(i);
        std::copy(src.begin(), src.end(), dst.begin());
    };
    put(0, rng.uniform_index(n));
    std::vector<double> d2(n);
    for (std::size_t i = 0; i < n; ++i) d2[i] = sq_dist(points.row(i), centers.row(0));
    for (int c = 1; c < k; ++c) {
        const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
        std::size_t pick = 0;
        if (total > 0) {
            const double u = rng.uniform() * total;
            double acc = 0;
            pick = n - 1;
            for (std::size_t i = 0; i < n; ++i) {
                acc += d2[i];
                if (u < acc) {
                    pick = i;
                    break;
                }
            }
            while (d2[pick] == 0.0) --pick;  // never land on an already chosen point
        } else {
            pick = rng.uniform_index(n);
        }
        put(c, pick);
        for (std::size_t i = 0; i < n; ++i) d2[i] = std::min(d2[i], sq_dist(points.row(i), centers.row(static_cast<std::size_t>(c))));
    }
    return centers;
}

}  // namespace

std::size_t distinct_rows(const Matrix& points) {
    std::set<std::vector<double>> seen;
    for (std::size_t r = 0; r < points.rows; ++r) {
        const auto row = points.row(r);
        seen.emplace(row.begin(), row.end());
    }
    return seen.size();
}

KMeansResult lloyd(const Matrix& points, Matrix centers, int max_iter) {
    const std::size_t n = points.rows, k = centers.rows, dim = points.cols;
    KMeansResult res;
    res.assignments.assign(n, -1);
    std::vector<double> dist(n);
    for (int it = 0; it < std::max(1, max_iter); ++it) {
        bool changed = false;
        double inertia = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const auto [c, d] = nearest(centers, points.row(i));
            if (c != res.assignments[i]) changed = true;
            res.assignments[i] = c;
            dist[i] = d;
            inertia += d;
        }
        res.inertia_trace.push_back(inertia);
        res.inertia = inertia;
        res.iterations = it + 1;

        Matrix sum(k, dim);
        std::vector<std::size_t> count(k, 0);
        for (std::size_t i = 0; i < n; ++i) {
            const auto c = static_cast<std::size_t>(res.assignments[i]);
            count[c]++;
            for (std::size_t j = 0; j < dim; ++j) sum.at(c, j) += points.at(i, j);
        }
        if (!changed) {
            // Lloyd fixed point: try single-point transfers that lower the
            // exact cost (Hartigan's rule), then resume Lloyd if any moved.
            bool moved = false;
            std::vector<double> mean(dim);
            for (std::size_t i = 0; i < n; ++i) {
                const auto a = static_cast<std::size_t>(res.assignments[i]);
                if (count[a] <= 1) continue;
                auto cost_to = [&](std::size_t c, double scale_num, double scale_den) {
                    for (std::size_t j = 0; j < dim; ++j) mean[j] = sum.at(c, j) / static_cast<double>(count[c]);
                    return scale_num / scale_den * sq_dist(points.row(i), mean);
                };
                const double na = static_cast<double>(count[a]);
                const double remove_gain = cost_to(a, na, na - 1.0);
                std::size_t best = a;
                double best_cost = remove_gain;
                for (std::size_t c = 0; c < k; ++c) {
                    if (c == a || count[c] == 0) continue;
                    const double nc = static_cast<double>(count[c]);
                    const double add = cost_to(c, nc, nc + 1.0);
                    if (add < best_cost * (1.0 - 1e-12)) {
                        best_cost = add;
                        best = c;
                    }
                }
                if (best == a) continue;
                for (std::size_t j = 0; j < dim; ++j) {
                    sum.at(a, j) -= points.at(i, j);
                    sum.at(best, j) += points.at(i, j);
                }
                count[a]--;
                count[best]++;
                res.assignments[i] = static_cast<int>(best);
                moved = true;
            }
            if (!moved) break;
        }
        for (std::size_t c = 0; c < k; ++c) {
            if (count[c] == 0) {
                // Re-seed at the point currently farthest from its center.
                std::size_t far = 0;
                for (std::size_t i = 1; i < n; ++i)
                    if (dist[i] > dist[far]) far = i;
                for (std::size_t j = 0; j < dim; ++j) centers.at(c, j) = points.at(far, j);
                dist[far] = 0;
                continue;
            }
            for (std::size_t j = 0; j < dim; ++j) centers.at(c, j) = sum.at(c, j) / static_cast<double>(count[c]);
        }
    }
    res.centers = std::move(centers);
    return res;
}

KMeansResult kmeans(const Matrix& points, const KMeansParams& params, std::uint64_t seed) {
    if (params.k < 1) throw PreconditionError("k-means needs k >= 1");
    if (params.restarts < 1) throw PreconditionError("k-means needs at least one restart");
    if (points.rows == 0) throw PreconditionError("k-means needs at least one point");
    if (!params.allow_degenerate && static_cast<std::size_t>(params.k) > distinct_rows(points)) {
        throw PreconditionError("k = " + std::to_string(params.k) + " exceeds the number of distinct points (" +
                                std::to_string(distinct_rows(points)) + ")");
    }
    std::vector<KMeansResult> runs(static_cast<std::size_t>(params.restarts));
    parallel_for(runs.size(), [&](std::size_t r) {
        Rng rng(derive_seed(seed, 0xC1A5, r));
        runs[r] = lloyd(points, kmeans_pp(points, params.k, rng), params.max_iter);
        runs[r].restart = static_cast<int>(r);
    });
    std::size_t best = 0;
    for (std::size_t r = 1; r < runs.size(); ++r)
        if (runs[r].inertia < runs[best].inertia) best = r;
    return std::move(runs[best]);
}

std::vector<double> sort_color_vector(const std::vector<Color>& palette, ColorSort mode) {
    std::vector<Color> entries = palette;
    std::vector<double> out;
    out.reserve(3 * palette.size());
    if (mode == ColorSort::lexicographic) {
        std::sort(entries.begin(), entries.end());
        for (int ch = 0; ch < 3; ++ch)
            for (const auto& e : entries) out.push_back(e[static_cast<std::size_t>(ch)]);
        return out;
    }
    for (int ch = 0; ch < 3; ++ch) {
        std::vector<double> v;
        for (const auto& e : entries) v.push_back(e[static_cast<std::size_t>(ch)]);
        std::sort(v.begin(), v.end());
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

DominantColorVector dominant_colors(const RasterVolume& vol, const PaletteParams& params, std::uint64_t seed,
                                    std::string image_id) {
    if (params.k_c < 1) throw PreconditionError("k_c must be at least 1");
    const std::size_t n = vol.voxel_count();
    if (n == 0) throw PreconditionError("cannot extract colors from an empty image");

    // Seeded selection sampling keeps raster order and picks exactly m voxels.
    const std::size_t m = std::min(n, std::max<std::size_t>(1, params.max_samples));
    Matrix pts(m, 3);
    Rng rng(derive_seed(seed, 0x5A3D));
    std::size_t taken = 0;
    for (std::size_t i = 0; i < n && taken < m; ++i) {
        if (m < n && rng.uniform() * static_cast<double>(n - i) >= static_cast<double>(m - taken)) continue;
        const Rgb c = vol.rgb(i);
        for (int ch = 0; ch < 3; ++ch) pts.at(taken, static_cast<std::size_t>(ch)) = c[static_cast<std::size_t>(ch)];
        ++taken;
    }

    const std::size_t distinct = distinct_rows(pts);
    int k = params.k_c;
    if (distinct < static_cast<std::size_t>(k)) {
        warn("image " + (image_id.empty() ? std::string("<unnamed>") : image_id) + " has only " +
             std::to_string(distinct) + " distinct colors; duplicating the rarest to reach k_c = " +
             std::to_string(params.k_c));
        k = static_cast<int>(distinct);
    }
    KMeansParams kp;
    kp.k = k;
    kp.max_iter = params.max_iter;
    kp.restarts = 1;
    const auto km = kmeans(pts, kp, derive_seed(seed, 0xC0105));

    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (int a : km.assignments) counts[static_cast<std::size_t>(a)]++;
    std::vector<std::size_t> order(static_cast<std::size_t>(k));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return counts[a] > counts[b]; });

    DominantColorVector out;
    out.image_id = std::move(image_id);
    out.k_c = params.k_c;
    out.inertia = km.inertia;
    for (auto c : order) {
        out.palette.push_back({km.centers.at(c, 0), km.centers.at(c, 1), km.centers.at(c, 2)});
        out.counts.push_back(counts[c]);
    }
    while (static_cast<int>(out.palette.size()) < params.k_c) {
        out.palette.push_back(out.palette.back());
        out.counts.push_back(0);
    }
    out.sorted = sort_color_vector(out.palette, params.sort);
    return out;
}

namespace {

Matrix stack_vectors(const std::vector<DominantColorVector>& vectors) {
    if (vectors.empty()) throw PreconditionError("no palette vectors to cluster");
    const std::size_t dim = vectors[0].sorted.size();
    Matrix pts(vectors.size(), dim);
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        if (vectors[i].sorted.size() != dim) throw DimensionMismatchError("palette vectors differ in length");
        std::copy(vectors[i].sorted.begin(), vectors[i].sorted.end(), pts.row(i).begin());
    }
    return pts;
}

}  // namespace

DatasetClustering cluster_images(const std::vector<DominantColorVector>& vectors, int k_i, std::uint64_t seed,
                                 int restarts) {
    const Matrix pts = stack_vectors(vectors);
    if (k_i < 1 || static_cast<std::size_t>(k_i) > pts.rows) {
        throw PreconditionError("k_i = " + std::to_string(k_i) + " must lie in [1, " + std::to_string(pts.rows) + "]");
    }
    KMeansParams kp;
    kp.k = k_i;
    kp.restarts = restarts;
    kp.allow_degenerate = true;
    const auto km = kmeans(pts, kp, seed);
    DatasetClustering out;
    out.k_i = k_i;
    out.assignments = km.assignments;
    out.centers = km.centers;
    out.inertia = km.inertia;
    out.prototypes.assign(static_cast<std::size_t>(k_i), std::nullopt);
    std::vector<double> best(static_cast<std::size_t>(k_i), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < pts.rows; ++i) {
        const auto c = static_cast<std::size_t>(out.assignments[i]);
        const double d = sq_dist(pts.row(i), out.centers.row(c));
        if (d < best[c]) {
            best[c] = d;
            out.prototypes[c] = i;
        }
    }
    return out;
}

std::vector<ElbowPoint> elbow_scan(const std::vector<DominantColorVector>& vectors, int k_min, int k_max,
                                   std::uint64_t seed, int restarts) {
    const Matrix pts = stack_vectors(vectors);
    if (k_min < 1 || k_max < k_min || static_cast<std::size_t>(k_max) > pts.rows) {
        throw PreconditionError("elbow range must lie within [1, " + std::to_string(pts.rows) + "]");
    }
    std::vector<ElbowPoint> out;
    std::optional<KMeansResult> prev;
    for (int k = k_min; k <= k_max; ++k) {
        KMeansParams kp;
        kp.k = k;
        kp.restarts = restarts;
        kp.allow_degenerate = true;
        KMeansResult best = kmeans(pts, kp, derive_seed(seed, static_cast<std::uint64_t>(k)));
        if (prev) {
            Matrix init(static_cast<std::size_t>(k), pts.cols);
            for (std::size_t c = 0; c < prev->centers.rows; ++c)
                std::copy(prev->centers.row(c).begin(), prev->centers.row(c).end(), init.row(c).begin());
            std::size_t far = 0;
            double fd = -1;
            for (std::size_t i = 0; i < pts.rows; ++i) {
                const double d = nearest(prev->centers, pts.row(i)).second;
                if (d > fd) {
                    fd = d;
                    far = i;
                }
            }
            std::copy(pts.row(far).begin(), pts.row(far).end(), init.row(static_cast<std::size_t>(k - 1)).begin());
            auto warm = lloyd(pts, std::move(init), 100);
            if (warm.inertia < best.inertia) best = std::move(warm);
        }
        out.push_back({k, best.inertia});
        prev = std::move(best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

std::vector<const ManifestEntry*> ClusterManifest::members(int cluster) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : images)
        if (e.cluster == cluster) out.push_back(&e);
    return out;
}

const ManifestEntry* ClusterManifest::prototype(int cluster) const {
    for (const auto& e : images)
        if (e.cluster == cluster && e.is_prototype) return &e;
    return nullptr;
}

const ManifestEntry* ClusterManifest::find(const std::string& id) const {
    for (const auto& e : images)
        if (e.id == id) return &e;
    return nullptr;
}

ClusterManifest make_manifest(const std::vector<DominantColorVector>& vectors, const std::vector<std::string>& paths,
                              const DatasetClustering& clustering, const PaletteParams& params, std::uint64_t seed) {
    if (paths.size() != vectors.size() || clustering.assignments.size() != vectors.size()) {
        throw DimensionMismatchError("manifest inputs disagree in image count");
    }
    ClusterManifest m;
    m.k_c = params.k_c;
    m.k_i = clustering.k_i;
    m.seed = seed;
    m.inertia = clustering.inertia;
    m.color_sort = params.sort == ColorSort::per_channel ? "per_channel" : "lexicographic";
    for (std::size_t c = 0; c < clustering.centers.rows; ++c) {
        const auto r = clustering.centers.row(c);
        m.centers.emplace_back(r.begin(), r.end());
    }
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        ManifestEntry e;
        e.id = vectors[i].image_id;
        e.path = paths[i];
        e.sorted = vectors[i].sorted;
        e.cluster = clustering.assignments[i];
        e.is_prototype = clustering.prototypes[static_cast<std::size_t>(e.cluster)] == i;
        m.images.push_back(std::move(e));
    }
    return m;
}

std::string format_manifest(const ClusterManifest& m) {
    nlohmann::json j;
    j["format"] = "svseg-cluster-manifest";
    j["version"] = 1;
    j["k_c"] = m.k_c;
    j["k_i"] = m.k_i;
    j["seed"] = m.seed;
    j["inertia"] = m.inertia;
    j["color_sort"] = m.color_sort;
    j["centers"] = m.centers;
    auto& imgs = j["images"] = nlohmann::json::array();
    for (const auto& e : m.images) {
        imgs.push_back({{"id", e.id},
                        {"path", e.path},
                        {"sorted_vector", e.sorted},
                        {"cluster", e.cluster},
                        {"is_prototype", e.is_prototype}});
    }
    return j.dump(2) + "\n";
}

ClusterManifest parse_manifest(const std::string& text) {
    try {
        const auto j = nlohmann::json::parse(text);
        if (j.value("format", "") != "svseg-cluster-manifest") throw FormatError("not a cluster manifest");
        if (j.at("version").get<int>() != 1) throw FormatError("unsupported cluster manifest version");
        ClusterManifest m;
        m.k_c = j.at("k_c").get<int>();
        m.k_i = j.at("k_i").get<int>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.inertia = j.at("inertia").get<double>();
        m.color_sort = j.value("color_sort", "per_channel");
        m.centers = j.at("centers").get<std::vector<std::vector<double>>>();
        std::set<std::string> ids;
        for (const auto& e : j.at("images")) {
            ManifestEntry me;
            me.id = e.at("id").get<std::string>();
            me.path = e.at("path").get<std::string>();
            me.sorted = e.at("sorted_vector").get<std::vector<double>>();
            me.cluster = e.at("cluster").get<int>();
            me.is_prototype = e.at("is_prototype").get<bool>();
            if (me.cluster < 0 || me.cluster >= m.k_i) throw FormatError("manifest cluster id out of range: " + me.id);
            if (!ids.insert(me.id).second) throw FormatError("duplicate image id in manifest: " + me.id);
            m.images.push_back(std::move(me));
        }
        return m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("cluster manifest: ") + e.what());
    }
}

void save_manifest(const ClusterManifest& m, const std::filesystem::path& path) {
    write_file_atomic(path, format_manifest(m));
}

ClusterManifest load_manifest(const std::filesystem::path& path) { return parse_manifest(read_file_text(path)); }

}  // namespace svseg
