#pragma once
// SLIC0 oversegmentation into compact supervoxels. The result is kept in a
// dual form: per-supervoxel run-length voxel lists plus an adjacency graph,
// alongside a dense per-voxel label field for O(1) lookup.

#include "svseg/image.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

namespace svseg {

struct SlicParams {
    int target_size = 64;
    int max_iterations = 10;
    bool enforce_connectivity = true;
};

/// Grid step S = round(target_size^(1/D)), at least 1.
int grid_step(int target_size, int dimensionality);

/// Heuristic density used when no size is given: round(N / 50000) clamped to
/// [16, 4096].
int auto_target_size(std::size_t voxel_count);

/// A run of voxels along x starting at `start`.
struct Run {
    VoxelCoord start;
    std::uint32_t length = 0;
    bool operator==(const Run&) const = default;
};

struct Supervoxel {
    std::uint32_t id = 0;
    std::vector<Run> runs;
    std::uint32_t size = 0;
    std::array<double, 3> mean_color{};
    /// x, y, z; z is 0 for 2D inputs.
    std::array<double, 3> centroid{};
    bool operator==(const Supervoxel&) const = default;
};

class Oversegmentation {
public:
    Oversegmentation() = default;

    /// Builds runs, adjacency and statistics from a dense label field whose
    /// values are exactly 0..n-1.
    static Oversegmentation from_label_field(const RasterVolume& vol, std::vector<std::uint32_t> labels,
                                             int target_size);

    const Dims& dims() const { return dims_; }
    std::size_t size() const { return supervoxels_.size(); }
    int target_size() const { return target_size_; }
    const std::vector<Supervoxel>& supervoxels() const { return supervoxels_; }
    const Supervoxel& at(std::uint32_t id) const;
    const std::vector<std::uint32_t>& label_field() const { return label_field_; }
    std::uint32_t label_at(std::size_t voxel) const { return label_field_[voxel]; }

    /// Throws PreconditionError if c is out of bounds.
    std::uint32_t label_of(const VoxelCoord& c) const;

    /// Sorted, symmetric face-adjacency. Throws for unknown ids.
    const std::vector<std::uint32_t>& neighbors(std::uint32_t id) const;
    const std::vector<std::vector<std::uint32_t>>& adjacency() const { return adjacency_; }

    /// Throws DimensionMismatchError if this segmentation was built on a
    /// volume of different extent.
    void check_attached(const RasterVolume& vol) const;

    bool operator==(const Oversegmentation&) const = default;

private:
    friend Oversegmentation deserialize_oversegmentation(std::span<const std::uint8_t>);

    Dims dims_;
    int target_size_ = 0;
    std::vector<Supervoxel> supervoxels_;
    std::vector<std::vector<std::uint32_t>> adjacency_;
    std::vector<std::uint32_t> label_field_;
};

struct SlicDiagnostics {
    /// Sum of squared joint distances after each assignment step.
    std::vector<double> objective;
    int iterations = 0;
    int initial_centers = 0;
    std::size_t fragments_absorbed = 0;
    std::size_t fragments_promoted = 0;
};

/// SLIC0 with adaptive per-cluster compactness. The algorithm is fully
/// deterministic; `seed` is recorded for provenance only.
Oversegmentation generate_supervoxels(const RasterVolume& vol, const SlicParams& params, std::uint64_t seed = 0,
                                      SlicDiagnostics* diagnostics = nullptr);

/// Voxels with at least one face neighbour in a different supervoxel.
BinaryMask boundary_mask(const Oversegmentation& seg);

/// sRGB (D65) to CIELAB.
std::array<double, 3> srgb_to_lab(Rgb c);

inline constexpr std::uint32_t kSvoxVersion = 1;

std::vector<std::uint8_t> serialize_oversegmentation(const Oversegmentation& seg);
Oversegmentation deserialize_oversegmentation(std::span<const std::uint8_t> bytes);
void save_oversegmentation(const Oversegmentation& seg, const std::filesystem::path& path);
Oversegmentation load_oversegmentation(const std::filesystem::path& path);

}  // namespace svseg
