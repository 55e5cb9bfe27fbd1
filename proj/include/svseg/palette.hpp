#pragma once
// Dominant-color palettes and k-means clustering of images by their sorted
// palette vectors; produces the cluster manifest that drives guided reuse.

#include "svseg/learn/dataset.hpp"

#include <optional>
#include <string>
#include <vector>

namespace svseg {

struct KMeansParams {
    int k = 1;
    int max_iter = 100;
    int restarts = 1;
    /// Accept k larger than the number of distinct points; the surplus
    /// clusters end up empty or duplicated.
    bool allow_degenerate = false;
};

struct KMeansResult {
    Matrix centers;  // k x D
    std::vector<int> assignments;
    double inertia = 0.0;
    int iterations = 0;
    int restart = 0;  // index of the winning restart
    /// Inertia after every assignment step of the winning run.
    std::vector<double> inertia_trace;
};

std::size_t distinct_rows(const Matrix& points);

/// k-means++ seeding plus Lloyd iterations, best of `restarts` by inertia
/// (lower restart index wins ties). Throws PreconditionError when k exceeds
/// the number of distinct points unless allow_degenerate is set.
KMeansResult kmeans(const Matrix& points, const KMeansParams& params, std::uint64_t seed);

/// Lloyd iterations from given initial centers. At a Lloyd fixed point,
/// single-point transfers that strictly lower the cost are applied before
/// iterating again.
KMeansResult lloyd(const Matrix& points, Matrix centers, int max_iter);

enum class ColorSort { per_channel, lexicographic };

using Color = std::array<double, 3>;

/// Per channel: all R values ascending, then all G, then all B.
/// Lexicographic: whole triples sorted, then split into the same three blocks.
std::vector<double> sort_color_vector(const std::vector<Color>& palette, ColorSort mode = ColorSort::per_channel);

struct DominantColorVector {
    std::string image_id;
    int k_c = 4;
    std::vector<double> sorted;    // 3 * k_c
    std::vector<Color> palette;    // most prevalent first
    std::vector<std::size_t> counts;
    double inertia = 0.0;
};

struct PaletteParams {
    int k_c = 4;
    std::size_t max_samples = 200000;
    int max_iter = 100;
    ColorSort sort = ColorSort::per_channel;
};

DominantColorVector dominant_colors(const RasterVolume& vol, const PaletteParams& params, std::uint64_t seed,
                                    std::string image_id = {});

struct DatasetClustering {
    int k_i = 0;
    std::vector<int> assignments;
    Matrix centers;
    /// Image index per cluster; empty clusters have none.
    std::vector<std::optional<std::size_t>> prototypes;
    double inertia = 0.0;
};

/// k-means over the sorted vectors (10 restarts by default), then per
/// cluster the member closest to the center (lowest index on ties).
DatasetClustering cluster_images(const std::vector<DominantColorVector>& vectors, int k_i, std::uint64_t seed,
                                 int restarts = 10);

struct ElbowPoint {
    int k;
    double inertia;
};

/// Best-of-restarts inertia for every k in [k_min, k_max]. Each k also
/// tries a warm start from the previous k's centers plus the farthest point,
/// so the curve is non-increasing.
std::vector<ElbowPoint> elbow_scan(const std::vector<DominantColorVector>& vectors, int k_min, int k_max,
                                   std::uint64_t seed, int restarts = 10);

struct ManifestEntry {
    std::string id;
    std::string path;
    std::vector<double> sorted;
    int cluster = 0;
    bool is_prototype = false;
};

struct ClusterManifest {
    int k_c = 4;
    int k_i = 6;
    std::uint64_t seed = 0;
    double inertia = 0.0;
    std::string color_sort = "per_channel";
    std::vector<std::vector<double>> centers;
    std::vector<ManifestEntry> images;

    /// Entries belonging to `cluster`, in manifest order.
    std::vector<const ManifestEntry*> members(int cluster) const;
    const ManifestEntry* prototype(int cluster) const;
    const ManifestEntry* find(const std::string& id) const;
};

ClusterManifest make_manifest(const std::vector<DominantColorVector>& vectors, const std::vector<std::string>& paths,
                              const DatasetClustering& clustering, const PaletteParams& params, std::uint64_t seed);

std::string format_manifest(const ClusterManifest& m);
ClusterManifest parse_manifest(const std::string& text);
void save_manifest(const ClusterManifest& m, const std::filesystem::path& path);
ClusterManifest load_manifest(const std::filesystem::path& path);

}  // namespace svseg
