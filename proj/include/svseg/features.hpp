#pragma once
// Per-supervoxel descriptors: local and neighbourhood RGB histograms,
// multi-scale gradient magnitude and Laplacian of Gaussian, and six GLCM
// texture statistics on the luma channel.

#include "svseg/supervoxel.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace svseg {

struct FeatureConfig {
    bool enable_local_hist = true;
    bool enable_neighborhood_hist = true;
    bool enable_gradient = true;
    bool enable_log = true;
    bool enable_texture = true;
    int histogram_bins = 16;
    std::vector<double> sigmas{0.5, 1.0, 2.0, 4.0, 7.0, 10.0};
    int glcm_levels = 32;

    /// Throws PreconditionError when no category is enabled or sigmas are not
    /// strictly increasing and positive.
    void validate() const;

    /// Canonical text form; fully determines the row layout.
    std::string canonical() const;
    static FeatureConfig parse(const std::string& canonical);

    /// Parses a comma list of categories: lh, nh, grad, log, tex (or "all").
    static FeatureConfig from_categories(const std::string& list);

    std::uint64_t layout_hash() const { return fnv1a64(canonical()); }
};

struct FeatureLayout {
    struct Block {
        std::string name;
        std::size_t offset;
        std::size_t size;
    };
    std::vector<Block> blocks;
    std::size_t row_length = 0;
};

FeatureLayout layout_of(const FeatureConfig& config);

/// Row-major float32 per-supervoxel features; row i is supervoxel id i.
class FeatureMatrix {
public:
    FeatureMatrix() = default;
    FeatureMatrix(FeatureConfig config, std::size_t rows);

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    const FeatureConfig& config() const { return config_; }
    std::uint64_t layout_hash() const { return config_.layout_hash(); }

    std::span<const float> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }
    std::span<float> row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }
    const std::vector<float>& values() const { return values_; }

    bool operator==(const FeatureMatrix& o) const {
        return rows_ == o.rows_ && cols_ == o.cols_ && config_.canonical() == o.config_.canonical() &&
               values_ == o.values_;
    }

private:
    FeatureConfig config_;
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<float> values_;
};

/// Dense per-supervoxel block in double precision, row-major.
struct BlockMatrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
    std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
};

enum class HistogramScope { local, neighborhood };

/// Per channel (R, G, B) a `bins`-bin histogram of 8-bit values, each channel
/// normalized to sum 1.
BlockMatrix color_histograms(const RasterVolume& vol, const Oversegmentation& seg, HistogramScope scope,
                             int bins = 16);

/// Separable Gaussian smoothing, kernel truncated at 4 sigma, symmetric
/// (half-sample) reflection at the borders. Smooths along every axis with
/// extent > 1.
std::vector<double> gaussian_smooth(const std::vector<double>& field, const Dims& dims, double sigma);

/// Mirror index into [0, n) with period 2n: -1 -> 0, n -> n-1.
int reflect_index(int i, int n);

/// Mean gradient magnitude, channel-major then sigma ascending.
BlockMatrix gradient_block(const RasterVolume& vol, const Oversegmentation& seg, const std::vector<double>& sigmas);

/// Mean Laplacian of Gaussian, same ordering as gradient_block.
BlockMatrix log_block(const RasterVolume& vol, const Oversegmentation& seg, const std::vector<double>& sigmas);

/// YIQ luma: 0.299 R + 0.587 G + 0.114 B.
std::vector<double> luma_image(const RasterVolume& vol);

inline double luma(Rgb c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

/// Equal-width quantization of luma in [0, 255] into `levels` bins.
int quantize_luma(double y, int levels);

using Offset = std::array<int, 3>;

/// (1,0),(0,1),(1,1),(1,-1) in 2D; axis-aligned plus in-plane diagonals in 3D.
std::vector<Offset> default_glcm_offsets(int dimensionality);

/// Inertia, ClusterShade, ClusterProminence, InverseDifferenceMoment, Energy,
/// Entropy, computed from a normalized (symmetric) GLCM of size levels^2.
std::array<double, 6> glcm_statistics(const std::vector<double>& p, int levels);

struct TextureDiagnostics {
    std::size_t supervoxels_without_pairs = 0;
};

/// GLCM texture per supervoxel using only pairs with both ends inside it.
BlockMatrix texture_block(const RasterVolume& vol, const Oversegmentation& seg, int levels,
                          const std::vector<Offset>& offsets = {}, TextureDiagnostics* diag = nullptr);

FeatureMatrix compute_features(const RasterVolume& vol, const Oversegmentation& seg, const FeatureConfig& config);

inline constexpr std::uint32_t kSvftVersion = 1;

std::vector<std::uint8_t> serialize_features(const FeatureMatrix& fm);
FeatureMatrix deserialize_features(std::span<const std::uint8_t> bytes);
void save_features(const FeatureMatrix& fm, const std::filesystem::path& path);
FeatureMatrix load_features(const std::filesystem::path& path);

}  // namespace svseg
