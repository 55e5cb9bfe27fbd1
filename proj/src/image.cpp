#include "svseg/image.hpp"

#include <png.h>
#include <tiffio.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <unordered_map>

namespace svseg {

std::string to_string(const Dims& d) {
    return std::to_string(d.x) + "x" + std::to_string(d.y) + "x" + std::to_string(d.z);
}

RasterVolume::RasterVolume(Dims dims, std::vector<std::uint8_t> data) : dims_(dims), data_(std::move(data)) {
    if (!dims_.valid()) throw PreconditionError("volume dims must be positive on every axis, got " + to_string(dims_));
    if (data_.size() != dims_.count() * 3) {
        throw PreconditionError("volume data length " + std::to_string(data_.size()) + " != x*y*z*3 = " +
                                std::to_string(dims_.count() * 3));
    }
}

RasterVolume::RasterVolume(Dims dims, Rgb fill) : dims_(dims) {
    if (!dims_.valid()) throw PreconditionError("volume dims must be positive on every axis, got " + to_string(dims_));
    data_.resize(dims_.count() * 3);
    for (std::size_t i = 0; i < dims_.count(); ++i) std::memcpy(&data_[i * 3], fill.data(), 3);
}

void RasterVolume::set(int x, int y, int z, Rgb v) {
    std::memcpy(&data_[linear_index(dims_, x, y, z) * 3], v.data(), 3);
}

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count_if(values.begin(), values.end(), [](std::uint8_t v) { return v != 0; }));
}

std::uint32_t LabelImage::max_label() const {
    return labels.empty() ? 0u : *std::max_element(labels.begin(), labels.end());
}

void LabelImage::relabel_contiguous() {
    std::unordered_map<std::uint32_t, std::uint32_t> remap;
    std::uint32_t next = 1;
    for (auto& l : labels) {
        if (l == 0) continue;
        auto [it, inserted] = remap.try_emplace(l, next);
        if (inserted) ++next;
        l = it->second;
    }
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

namespace {

bool has_extension(const std::filesystem::path& p, std::initializer_list<const char*> exts) {
    std::string e = p.extension().string();
    std::transform(e.begin(), e.end(), e.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return std::any_of(exts.begin(), exts.end(), [&](const char* x) { return e == x; });
}

bool is_tiff(const std::filesystem::path& p) { return has_extension(p, {".tif", ".tiff"}); }

RasterVolume decode_png(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    if (image.format & PNG_FORMAT_FLAG_LINEAR) {
        png_image_free(&image);
        throw FormatError("unsupported bit depth in " + path.string() + ": 16-bit images are not accepted");
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> data(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, data.data(), 0, nullptr)) {
        throw IoError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    return RasterVolume({static_cast<int>(image.width), static_cast<int>(image.height), 1}, std::move(data));
}

struct TiffCloser {
    void operator()(TIFF* t) const {
        if (t) TIFFClose(t);
    }
};
using TiffHandle = std::unique_ptr<TIFF, TiffCloser>;

void silence_tiff_handler(const char*, const char*, va_list) {}

std::vector<RasterVolume> decode_tiff(const std::filesystem::path& path) {
    TIFFSetWarningHandler(silence_tiff_handler);
    TIFFSetErrorHandler(silence_tiff_handler);
    TiffHandle tif(TIFFOpen(path.c_str(), "r"));
    if (!tif) throw IoError("cannot open TIFF " + path.string());
    std::vector<RasterVolume> pages;
    do {
        std::uint32_t w = 0, h = 0;
        std::uint16_t bps = 8, spp = 1;
        TIFFGetField(tif.get(), TIFFTAG_IMAGEWIDTH, &w);
        TIFFGetField(tif.get(), TIFFTAG_IMAGELENGTH, &h);
        TIFFGetFieldDefaulted(tif.get(), TIFFTAG_BITSPERSAMPLE, &bps);
        TIFFGetFieldDefaulted(tif.get(), TIFFTAG_SAMPLESPERPIXEL, &spp);
        if (bps != 8) {
            throw FormatError("unsupported bit depth in " + path.string() + ": " + std::to_string(bps) +
                              " bits per sample (8 required)");
        }
        if (spp < 1 || spp > 4) {
            throw FormatError("unsupported channel count in " + path.string() + ": " + std::to_string(spp));
        }
        std::vector<std::uint32_t> rgba(static_cast<std::size_t>(w) * h);
        if (!TIFFReadRGBAImageOriented(tif.get(), w, h, rgba.data(), ORIENTATION_TOPLEFT, 0)) {
            throw IoError("cannot decode TIFF page in " + path.string());
        }
        std::vector<std::uint8_t> data(rgba.size() * 3);
        for (std::size_t i = 0; i < rgba.size(); ++i) {
            data[i * 3] = static_cast<std::uint8_t>(TIFFGetR(rgba[i]));
            data[i * 3 + 1] = static_cast<std::uint8_t>(TIFFGetG(rgba[i]));
            data[i * 3 + 2] = static_cast<std::uint8_t>(TIFFGetB(rgba[i]));
        }
        pages.emplace_back(Dims{static_cast<int>(w), static_cast<int>(h), 1}, std::move(data));
    } while (TIFFReadDirectory(tif.get()));
    return pages;
}

RasterVolume stack(std::vector<RasterVolume> slices, const std::string& what) {
    if (slices.empty()) throw PreconditionError("no slices found in " + what);
    const Dims first = slices.front().dims();
    std::vector<std::uint8_t> data;
    data.reserve(first.count() * 3 * slices.size());
    for (const auto& s : slices) {
        if (s.dims().x != first.x || s.dims().y != first.y) {
            throw DimensionMismatchError("mixed slice dimensions in " + what + ": " + to_string(first) + " vs " +
                                         to_string(s.dims()));
        }
        data.insert(data.end(), s.data().begin(), s.data().end());
    }
    return RasterVolume({first.x, first.y, static_cast<int>(slices.size())}, std::move(data));
}

}  // namespace

std::vector<RasterVolume> decode_image_file(const std::filesystem::path& path) {
    if (!std::filesystem::is_regular_file(path)) throw IoError("unreadable file: " + path.string());
    if (is_tiff(path)) return decode_tiff(path);
    std::vector<RasterVolume> out;
    out.push_back(decode_png(path));
    return out;
}

RasterVolume load_volume(const std::filesystem::path& path, Layout layout) {
    if (layout == Layout::single_image) {
        auto pages = decode_image_file(path);
        if (pages.size() == 1) return std::move(pages.front());
        return stack(std::move(pages), path.string());
    }
    if (!std::filesystem::is_directory(path)) throw IoError("slice stack directory not found: " + path.string());
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(path)) {
        if (e.is_regular_file() && has_extension(e.path(), {".png", ".tif", ".tiff"})) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end(),
              [](const auto& a, const auto& b) { return a.filename().string() < b.filename().string(); });
    std::vector<RasterVolume> slices;
    for (const auto& f : files) {
        auto pages = decode_image_file(f);
        for (auto& p : pages) slices.push_back(std::move(p));
    }
    return stack(std::move(slices), path.string());
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

Axis parse_axis(std::string_view s) {
    if (s == "x") return Axis::x;
    if (s == "y") return Axis::y;
    if (s == "z") return Axis::z;
    throw PreconditionError("axis must be one of x, y, z");
}

Rgb probability_color(double p) {
    p = std::clamp(p, 0.0, 1.0);
    auto to8 = [](double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0))); };
    if (p <= 0.5) {
        const double t = p / 0.5;
        return {255, to8(255.0 * t), 0};
    }
    const double t = (p - 0.5) / 0.5;
    return {to8(255.0 * (1.0 - t)), to8(255.0 * (1.0 - t)), to8(255.0 * t)};
}

Rgb label_color(std::uint32_t label) {
    if (label == 0 || label >= (1u << 24)) throw PreconditionError("label color requires 1 <= label < 2^24");
    // Multiplication by an odd constant is a bijection modulo 2^24.
    const std::uint32_t v = (label * 0x9E3779u) & 0xFFFFFFu;
    return {static_cast<std::uint8_t>(v >> 16), static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)};
}

std::uint32_t label_from_color(Rgb c) {
    const std::uint32_t v = (static_cast<std::uint32_t>(c[0]) << 16) | (static_cast<std::uint32_t>(c[1]) << 8) | c[2];
    if (v == 0) return 0;
    // Newton iteration for the inverse of the odd multiplier modulo 2^24.
    std::uint32_t inv = 0x9E3779u;
    for (int i = 0; i < 5; ++i) inv *= 2u - 0x9E3779u * inv;
    return (v * inv) & 0xFFFFFFu;
}

RgbImage extract_slice(const RasterVolume& vol, Axis axis, int index, SliceOverlay overlay, double blend) {
    const Dims& d = vol.dims();
    const int extent = axis == Axis::x ? d.x : axis == Axis::y ? d.y : d.z;
    if (index < 0 || index >= extent) {
        throw PreconditionError("slice index " + std::to_string(index) + " out of range [0, " + std::to_string(extent) +
                                ")");
    }
    if (blend < 0.0 || blend > 1.0) throw PreconditionError("blend must be in [0, 1]");
    const LabelImage* labels = std::holds_alternative<const LabelImage*>(overlay) ? std::get<const LabelImage*>(overlay)
                                                                                  : nullptr;
    const ScalarField* field = std::holds_alternative<const ScalarField*>(overlay)
                                   ? std::get<const ScalarField*>(overlay)
                                   : nullptr;
    if (labels && labels->dims != d) throw DimensionMismatchError("overlay dims differ from volume dims");
    if (field && field->dims != d) throw DimensionMismatchError("overlay dims differ from volume dims");

    RgbImage out;
    out.width = axis == Axis::x ? d.y : d.x;
    out.height = axis == Axis::z ? d.y : d.z;
    out.data.resize(static_cast<std::size_t>(out.width) * static_cast<std::size_t>(out.height) * 3);
    for (int v = 0; v < out.height; ++v) {
        for (int u = 0; u < out.width; ++u) {
            VoxelCoord c;
            switch (axis) {
                case Axis::z: c = {u, v, index}; break;
                case Axis::y: c = {u, index, v}; break;
                case Axis::x: c = {index, u, v}; break;
            }
            const std::size_t vi = linear_index(d, c);
            Rgb px = vol.rgb(vi);
            std::optional<Rgb> top;
            if (labels && labels->labels[vi] != 0) top = label_color(labels->labels[vi]);
            if (field) top = probability_color(field->values[vi]);
            if (top && blend > 0.0) {
                for (int k = 0; k < 3; ++k) {
                    const double mixed = (1.0 - blend) * px[k] + blend * (*top)[k];
                    px[k] = static_cast<std::uint8_t>(std::lround(mixed));
                }
            }
            const auto oi = (static_cast<std::size_t>(v) * static_cast<std::size_t>(out.width) + static_cast<std::size_t>(u)) * 3;
            std::memcpy(&out.data[oi], px.data(), 3);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

namespace {

std::vector<std::uint8_t> encode_png_format(int width, int height, std::uint32_t format, const std::uint8_t* pixels) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(width);
    image.height = static_cast<png_uint_32>(height);
    image.format = format;
    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels, 0, nullptr)) {
        throw IoError(std::string("PNG encoding failed: ") + image.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels, 0, nullptr)) {
        throw IoError(std::string("PNG encoding failed: ") + image.message);
    }
    out.resize(size);
    return out;
}

void write_tiff_pages(const std::filesystem::path& path, const Dims& d, int samples,
                      const std::vector<std::uint8_t>& data) {
    auto tmp = path;
    tmp += ".tmp";
    {
        TiffHandle tif(TIFFOpen(tmp.c_str(), "w"));
        if (!tif) throw IoError("cannot write " + path.string());
        const std::size_t row = static_cast<std::size_t>(d.x) * static_cast<std::size_t>(samples);
        for (int z = 0; z < d.z; ++z) {
            TIFFSetField(tif.get(), TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(d.x));
            TIFFSetField(tif.get(), TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(d.y));
            TIFFSetField(tif.get(), TIFFTAG_SAMPLESPERPIXEL, static_cast<std::uint16_t>(samples));
            TIFFSetField(tif.get(), TIFFTAG_BITSPERSAMPLE, static_cast<std::uint16_t>(8));
            TIFFSetField(tif.get(), TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
            TIFFSetField(tif.get(), TIFFTAG_PHOTOMETRIC, samples == 3 ? PHOTOMETRIC_RGB : PHOTOMETRIC_MINISBLACK);
            TIFFSetField(tif.get(), TIFFTAG_COMPRESSION, COMPRESSION_DEFLATE);
            TIFFSetField(tif.get(), TIFFTAG_ROWSPERSTRIP, static_cast<std::uint32_t>(d.y));
            TIFFSetField(tif.get(), TIFFTAG_SUBFILETYPE, FILETYPE_PAGE);
            TIFFSetField(tif.get(), TIFFTAG_PAGENUMBER, static_cast<std::uint16_t>(z), static_cast<std::uint16_t>(d.z));
            for (int y = 0; y < d.y; ++y) {
                auto* ptr = const_cast<std::uint8_t*>(&data[(static_cast<std::size_t>(z) * d.y + y) * row]);
                if (TIFFWriteScanline(tif.get(), ptr, static_cast<std::uint32_t>(y), 0) < 0) {
                    throw IoError("TIFF scanline write failed: " + path.string());
                }
            }
            if (!TIFFWriteDirectory(tif.get())) throw IoError("TIFF page write failed: " + path.string());
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) throw IoError("cannot replace " + path.string());
}

}  // namespace

std::vector<std::uint8_t> encode_png(const RgbImage& img) {
    return encode_png_format(img.width, img.height, PNG_FORMAT_RGB, img.data.data());
}

std::vector<std::uint8_t> encode_png_gray(int width, int height, std::span<const std::uint8_t> gray) {
    return encode_png_format(width, height, PNG_FORMAT_GRAY, gray.data());
}

void write_png(const RgbImage& img, const std::filesystem::path& path) { write_file_atomic(path, encode_png(img)); }

void write_volume(const RasterVolume& vol, const std::filesystem::path& path) {
    const Dims& d = vol.dims();
    if (is_tiff(path)) {
        write_tiff_pages(path, d, 3, vol.data());
        return;
    }
    if (d.z != 1) throw PreconditionError("3D volumes must be written as .tif/.tiff, got " + path.string());
    write_file_atomic(path, encode_png_format(d.x, d.y, PNG_FORMAT_RGB, vol.data().data()));
}

void write_label_image(const LabelImage& labels, const std::filesystem::path& path, LabelWriteMode mode) {
    const Dims& d = labels.dims;
    if (labels.labels.size() != d.count()) throw PreconditionError("label image size does not match dims");
    const int samples = mode == LabelWriteMode::mask ? 1 : 3;
    std::vector<std::uint8_t> pixels(d.count() * static_cast<std::size_t>(samples), 0);
    for (std::size_t i = 0; i < d.count(); ++i) {
        const auto l = labels.labels[i];
        if (l == 0) continue;
        if (mode == LabelWriteMode::mask) {
            pixels[i] = 255;
        } else {
            const Rgb c = label_color(l);
            std::memcpy(&pixels[i * 3], c.data(), 3);
        }
    }
    if (is_tiff(path)) {
        write_tiff_pages(path, d, samples, pixels);
        return;
    }
    if (d.z != 1) throw PreconditionError("3D label images must be written as .tif/.tiff, got " + path.string());
    write_file_atomic(path, encode_png_format(d.x, d.y, samples == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB, pixels.data()));
}

LabelImage read_colorized_labels(const std::filesystem::path& path) {
    const RasterVolume vol = load_volume(path);
    LabelImage out(vol.dims());
    for (std::size_t i = 0; i < vol.voxel_count(); ++i) out.labels[i] = label_from_color(vol.rgb(i));
    return out;
}

LabelImage read_mask(const std::filesystem::path& path) {
    const RasterVolume vol = load_volume(path);
    LabelImage out(vol.dims());
    for (std::size_t i = 0; i < vol.voxel_count(); ++i) {
        const Rgb c = vol.rgb(i);
        out.labels[i] = (c[0] | c[1] | c[2]) != 0 ? 1u : 0u;
    }
    return out;
}

}  // namespace svseg
