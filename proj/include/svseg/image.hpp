#pragma once
// Raster storage: 8-bit RGB volumes (2D images are z = 1), label images,
// scalar fields, PNG/TIFF ingestion and export, slice rendering.

#include "svseg/common.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace svseg {

struct Dims {
    int x = 0;
    int y = 0;
    int z = 1;

    std::size_t count() const {
        return static_cast<std::size_t>(x) * static_cast<std::size_t>(y) * static_cast<std::size_t>(z);
    }
    int dimensionality() const { return z > 1 ? 3 : 2; }
    bool valid() const { return x > 0 && y > 0 && z > 0; }
    bool operator==(const Dims&) const = default;
};

std::string to_string(const Dims& d);

struct VoxelCoord {
    int x = 0;
    int y = 0;
    int z = 0;
    bool operator==(const VoxelCoord&) const = default;
};

inline bool in_bounds(const Dims& d, const VoxelCoord& c) {
    return c.x >= 0 && c.y >= 0 && c.z >= 0 && c.x < d.x && c.y < d.y && c.z < d.z;
}

inline std::size_t linear_index(const Dims& d, int x, int y, int z) {
    return (static_cast<std::size_t>(z) * static_cast<std::size_t>(d.y) + static_cast<std::size_t>(y)) *
               static_cast<std::size_t>(d.x) +
           static_cast<std::size_t>(x);
}

inline std::size_t linear_index(const Dims& d, const VoxelCoord& c) { return linear_index(d, c.x, c.y, c.z); }

inline VoxelCoord coord_of(const Dims& d, std::size_t i) {
    const auto plane = static_cast<std::size_t>(d.x) * static_cast<std::size_t>(d.y);
    const auto z = i / plane;
    const auto rem = i % plane;
    return {static_cast<int>(rem % static_cast<std::size_t>(d.x)), static_cast<int>(rem / static_cast<std::size_t>(d.x)),
            static_cast<int>(z)};
}

using Rgb = std::array<std::uint8_t, 3>;

/// Channel-interleaved 8-bit RGB volume.
class RasterVolume {
public:
    RasterVolume() = default;
    RasterVolume(Dims dims, std::vector<std::uint8_t> data);
    explicit RasterVolume(Dims dims, Rgb fill = {0, 0, 0});

    const Dims& dims() const { return dims_; }
    std::size_t voxel_count() const { return dims_.count(); }
    const std::vector<std::uint8_t>& data() const { return data_; }
    std::vector<std::uint8_t>& mutable_data() { return data_; }

    std::uint8_t channel(std::size_t voxel, int c) const { return data_[voxel * 3 + static_cast<std::size_t>(c)]; }
    Rgb rgb(std::size_t voxel) const { return {data_[voxel * 3], data_[voxel * 3 + 1], data_[voxel * 3 + 2]}; }
    Rgb rgb(int x, int y, int z = 0) const { return rgb(linear_index(dims_, x, y, z)); }
    void set(int x, int y, int z, Rgb v);

    /// Physical voxel size per axis; informational only.
    std::array<double, 3> spacing{1.0, 1.0, 1.0};

private:
    Dims dims_;
    std::vector<std::uint8_t> data_;
};

/// Per-voxel integer labels, 0 = background.
struct LabelImage {
    Dims dims;
    std::vector<std::uint32_t> labels;

    LabelImage() = default;
    explicit LabelImage(Dims d) : dims(d), labels(d.count(), 0) {}

    std::uint32_t max_label() const;
    /// Renumbers non-zero labels to 1..n in order of first raster occurrence.
    void relabel_contiguous();
};

/// Per-voxel boolean raster (stored as 0/1 bytes).
struct BinaryMask {
    Dims dims;
    std::vector<std::uint8_t> values;

    BinaryMask() = default;
    explicit BinaryMask(Dims d, std::uint8_t fill = 0) : dims(d), values(d.count(), fill) {}

    bool operator[](std::size_t i) const { return values[i] != 0; }
    std::size_t count() const;
    bool operator==(const BinaryMask&) const = default;
};

/// Per-voxel float field, e.g. a painted probability map.
struct ScalarField {
    Dims dims;
    std::vector<float> values;
};

enum class Layout { single_image, slice_stack };

/// Loads PNG or TIFF (multi-page TIFF becomes a volume), or a directory of
/// equally sized 2D slices in lexicographic filename order.
RasterVolume load_volume(const std::filesystem::path& path, Layout layout = Layout::single_image);

/// Rasters decoded from one file; multi-page TIFF yields several.
std::vector<RasterVolume> decode_image_file(const std::filesystem::path& path);

enum class Axis { x, y, z };

Axis parse_axis(std::string_view s);

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;

    Rgb at(int x, int y) const {
        const auto i = (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) * 3;
        return {data[i], data[i + 1], data[i + 2]};
    }
};

using SliceOverlay = std::variant<std::monostate, const LabelImage*, const ScalarField*>;

/// Red (p = 0) to yellow (p = 0.5) to blue (p = 1), piecewise linear.
Rgb probability_color(double p);

/// Deterministic, distinct, never black for labels in [1, 2^24).
Rgb label_color(std::uint32_t label);

/// Slice perpendicular to `axis`. For axis z the image is (x, y); for y it
/// is (x, z); for x it is (y, z). Label 0 is transparent in label overlays.
RgbImage extract_slice(const RasterVolume& vol, Axis axis, int index, SliceOverlay overlay = {}, double blend = 0.0);

enum class LabelWriteMode { mask, colorized };

/// 2D label images are written as PNG, 3D as multi-page TIFF (.tif/.tiff).
void write_label_image(const LabelImage& labels, const std::filesystem::path& path, LabelWriteMode mode);

std::vector<std::uint8_t> encode_png(const RgbImage& img);
std::vector<std::uint8_t> encode_png_gray(int width, int height, std::span<const std::uint8_t> gray);
void write_png(const RgbImage& img, const std::filesystem::path& path);
void write_volume(const RasterVolume& vol, const std::filesystem::path& path);

/// Reads a mask written by write_label_image(mask): non-zero -> label 1.
LabelImage read_mask(const std::filesystem::path& path);

/// Inverse of label_color; black maps to 0.
std::uint32_t label_from_color(Rgb c);

/// Reads a label image written by write_label_image(colorized).
LabelImage read_colorized_labels(const std::filesystem::path& path);

}  // namespace svseg
