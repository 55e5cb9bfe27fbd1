#include "doctest.h"
#include "helpers.hpp"

#include "svseg/image.hpp"

#include <png.h>

#include <cstring>
#include <set>

using namespace svseg;
using svseg::test::TempDir;

namespace {

void write_rgb_png(const RasterVolume& v, const std::filesystem::path& p) { write_volume(v, p); }

void write_png16(const std::filesystem::path& p, int w, int h) {
    png_image image;
    std::memset(&image, 0, sizeof image);
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(w);
    image.height = static_cast<png_uint_32>(h);
    image.format = PNG_FORMAT_LINEAR_Y;
    std::vector<std::uint16_t> px(static_cast<std::size_t>(w * h), 40000);
    REQUIRE(png_image_write_to_file(&image, p.c_str(), 0, px.data(), 0, nullptr));
}

}  // namespace

TEST_CASE("png loads as a 2D volume") {
    TempDir dir;
    const auto src = svseg::test::random_volume({512, 512, 1}, 1);
    write_rgb_png(src, dir / "a.png");
    const auto v = load_volume(dir / "a.png");
    CHECK(v.dims() == Dims{512, 512, 1});
    CHECK(v.data() == src.data());
    CHECK(v.data().size() == 512u * 512u * 3u);
}

TEST_CASE("slice directory stacks in lexicographic order") {
    TempDir dir;
    std::vector<RasterVolume> slices;
    for (int i = 0; i < 10; ++i) {
        slices.push_back(svseg::test::random_volume({20, 15, 1}, 100 + i));
        // Zero-padded names sort the same lexicographically and numerically.
        write_rgb_png(slices.back(), dir / ("s" + std::to_string(10 + i) + ".png"));
    }
    const auto v = load_volume(dir.path(), Layout::slice_stack);
    CHECK(v.dims() == Dims{20, 15, 10});
    for (int z = 0; z < 10; ++z) {
        const auto img = extract_slice(v, Axis::z, z);
        CHECK(img.data == slices[static_cast<std::size_t>(z)].data());
    }
}

TEST_CASE("mixed slice dimensions are rejected") {
    TempDir dir;
    write_rgb_png(RasterVolume({100, 100, 1}), dir / "a.png");
    write_rgb_png(RasterVolume({200, 200, 1}), dir / "b.png");
    CHECK_THROWS_AS(load_volume(dir.path(), Layout::slice_stack), DimensionMismatchError);
}

TEST_CASE("unreadable and 16-bit inputs are reported") {
    TempDir dir;
    CHECK_THROWS_AS(load_volume(dir / "missing.png"), IoError);
    write_png16(dir / "deep.png", 8, 8);
    CHECK_THROWS_AS(load_volume(dir / "deep.png"), FormatError);
}

TEST_CASE("grayscale promotes to equal channels") {
    TempDir dir;
    std::vector<std::uint8_t> gray(30 * 20);
    for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = static_cast<std::uint8_t>(i * 7);
    write_file_atomic(dir / "g.png", encode_png_gray(30, 20, gray));
    const auto v = load_volume(dir / "g.png");
    REQUIRE(v.dims() == Dims{30, 20, 1});
    for (std::size_t i = 0; i < v.voxel_count(); ++i) {
        const Rgb c = v.rgb(i);
        CHECK(c[0] == gray[i]);
        CHECK(c[1] == c[0]);
        CHECK(c[2] == c[0]);
    }
}

TEST_CASE("multi-page tiff round trip") {
    TempDir dir;
    const auto src = svseg::test::random_volume({13, 9, 5}, 7);
    write_volume(src, dir / "v.tif");
    const auto v = load_volume(dir / "v.tif");
    CHECK(v.dims() == src.dims());
    CHECK(v.data() == src.data());
}

TEST_CASE("extract_slice identity and dims on every axis") {
    const auto vol = svseg::test::random_volume({7, 5, 4}, 3);
    for (int z = 0; z < 4; ++z) {
        const auto s = extract_slice(vol, Axis::z, z);
        CHECK(s.width == 7);
        CHECK(s.height == 5);
        for (int y = 0; y < 5; ++y)
            for (int x = 0; x < 7; ++x) CHECK(s.at(x, y) == vol.rgb(x, y, z));
    }
    for (int y = 0; y < 5; ++y) {
        const auto s = extract_slice(vol, Axis::y, y);
        CHECK(s.width == 7);
        CHECK(s.height == 4);
        for (int z = 0; z < 4; ++z)
            for (int x = 0; x < 7; ++x) CHECK(s.at(x, z) == vol.rgb(x, y, z));
    }
    for (int x = 0; x < 7; ++x) {
        const auto s = extract_slice(vol, Axis::x, x);
        CHECK(s.width == 5);
        CHECK(s.height == 4);
        for (int z = 0; z < 4; ++z)
            for (int y = 0; y < 5; ++y) CHECK(s.at(y, z) == vol.rgb(x, y, z));
    }
    CHECK_THROWS_AS(extract_slice(vol, Axis::z, 4), PreconditionError);
    CHECK_THROWS_AS(extract_slice(vol, Axis::x, -1), PreconditionError);
}

TEST_CASE("probability overlay poles") {
    const auto vol = svseg::test::random_volume({6, 6, 1}, 9);
    ScalarField p{vol.dims(), std::vector<float>(36, 0.0f)};
    auto s = extract_slice(vol, Axis::z, 0, &p, 1.0);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) CHECK(s.at(x, y) == Rgb{255, 0, 0});
    std::fill(p.values.begin(), p.values.end(), 1.0f);
    s = extract_slice(vol, Axis::z, 0, &p, 1.0);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 6; ++x) CHECK(s.at(x, y) == Rgb{0, 0, 255});
    CHECK(probability_color(0.5) == Rgb{255, 255, 0});
    const auto raw = extract_slice(vol, Axis::z, 0, &p, 0.0);
    CHECK(raw.data == vol.data());
}

TEST_CASE("label overlay leaves background transparent") {
    const auto vol = svseg::test::random_volume({4, 4, 1}, 11);
    LabelImage l(vol.dims());
    l.labels[5] = 3;
    const auto s = extract_slice(vol, Axis::z, 0, &l, 1.0);
    CHECK(s.at(1, 1) == label_color(3));
    CHECK(s.at(0, 0) == vol.rgb(0, 0, 0));
}

TEST_CASE("label colors are distinct and never black") {
    std::set<Rgb> seen;
    for (std::uint32_t l = 1; l < 20000; ++l) {
        const Rgb c = label_color(l);
        CHECK((c[0] | c[1] | c[2]) != 0);
        seen.insert(c);
    }
    CHECK(seen.size() == 19999u);
    for (std::uint32_t l : {1u, 2u, 255u, 70000u, (1u << 24) - 1}) CHECK(label_from_color(label_color(l)) == l);
    CHECK(label_from_color({0, 0, 0}) == 0);
}

TEST_CASE("colorized label images round trip in 2D and 3D") {
    TempDir dir;
    Rng rng(8);
    for (Dims d : {Dims{9, 7, 1}, Dims{5, 4, 3}}) {
        LabelImage l(d);
        for (auto& v : l.labels) v = rng.uniform() < 0.5 ? 0 : static_cast<std::uint32_t>(rng.uniform_int(1, 100000));
        const auto path = dir / (d.z > 1 ? "labels.tif" : "labels.png");
        write_label_image(l, path, LabelWriteMode::colorized);
        CHECK(read_colorized_labels(path).labels == l.labels);
    }
}

TEST_CASE("write_label_image modes") {
    TempDir dir;
    LabelImage empty(Dims{10, 8, 1});
    write_label_image(empty, dir / "empty.png", LabelWriteMode::mask);
    const auto black = load_volume(dir / "empty.png");
    CHECK(std::all_of(black.data().begin(), black.data().end(), [](auto b) { return b == 0; }));

    LabelImage three(Dims{6, 1, 1});
    three.labels = {0, 1, 1, 2, 2, 0};
    write_label_image(three, dir / "color.png", LabelWriteMode::colorized);
    const auto colored = load_volume(dir / "color.png");
    std::set<Rgb> colors;
    for (std::size_t i = 0; i < colored.voxel_count(); ++i) {
        const Rgb c = colored.rgb(i);
        if ((c[0] | c[1] | c[2]) != 0) colors.insert(c);
    }
    CHECK(colors.size() == 2u);

    LabelImage m(Dims{9, 7, 1});
    Rng rng(4);
    for (auto& v : m.labels) v = static_cast<std::uint32_t>(rng.uniform_index(2));
    write_label_image(m, dir / "mask.png", LabelWriteMode::mask);
    CHECK(read_mask(dir / "mask.png").labels == m.labels);

    LabelImage vol3(Dims{5, 4, 3});
    for (std::size_t i = 0; i < vol3.labels.size(); i += 3) vol3.labels[i] = 1;
    write_label_image(vol3, dir / "mask3.tif", LabelWriteMode::mask);
    CHECK(read_mask(dir / "mask3.tif").labels == vol3.labels);
    CHECK_THROWS_AS(write_label_image(vol3, dir / "mask3.png", LabelWriteMode::mask), PreconditionError);
    CHECK_THROWS_AS(write_label_image(m, dir / "no_such_dir" / "m.png", LabelWriteMode::mask), IoError);
}

TEST_CASE("relabel_contiguous orders by first occurrence") {
    LabelImage l(Dims{5, 1, 1});
    l.labels = {7, 0, 3, 7, 9};
    l.relabel_contiguous();
    CHECK(l.labels == std::vector<std::uint32_t>{1, 0, 2, 1, 3});
    CHECK(l.max_label() == 3u);
}
