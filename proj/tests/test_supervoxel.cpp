#include "doctest.h"
#include "helpers.hpp"

#include "svseg/supervoxel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <queue>
#include <set>

using namespace svseg;

namespace {

/// Flood fill over face neighbours restricted to one label.
bool is_face_connected(const Oversegmentation& seg, std::uint32_t id) {
    const Dims& d = seg.dims();
    const auto& sv = seg.at(id);
    const VoxelCoord start = sv.runs.front().start;
    std::vector<char> seen(d.count(), 0);
    std::queue<VoxelCoord> q;
    q.push(start);
    seen[linear_index(d, start)] = 1;
    std::size_t reached = 0;
    const int off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
    while (!q.empty()) {
        const auto c = q.front();
        q.pop();
        ++reached;
        for (const auto& o : off) {
            const VoxelCoord n{c.x + o[0], c.y + o[1], c.z + o[2]};
            if (!in_bounds(d, n)) continue;
            const auto i = linear_index(d, n);
            if (seen[i] || seg.label_at(i) != id) continue;
            seen[i] = 1;
            q.push(n);
        }
    }
    return reached == sv.size;
}

void check_structure(const Oversegmentation& seg, const RasterVolume& vol) {
    const Dims& d = vol.dims();
    std::size_t total = 0;
    std::vector<int> cover(d.count(), 0);
    for (const auto& sv : seg.supervoxels()) {
        std::size_t run_sum = 0;
        for (std::size_t r = 0; r < sv.runs.size(); ++r) {
            const auto& run = sv.runs[r];
            REQUIRE(run.start.x + static_cast<int>(run.length) <= d.x);
            for (std::uint32_t k = 0; k < run.length; ++k) {
                const auto i = linear_index(d, run.start.x + static_cast<int>(k), run.start.y, run.start.z);
                ++cover[i];
                REQUIRE(seg.label_at(i) == sv.id);
            }
            run_sum += run.length;
            if (r > 0) {
                const auto& p = sv.runs[r - 1];
                const auto a = linear_index(d, p.start) + p.length;
                REQUIRE(a < linear_index(d, run.start));
            }
        }
        REQUIRE(run_sum == sv.size);
        total += sv.size;
    }
    CHECK(total == d.count());
    CHECK(std::all_of(cover.begin(), cover.end(), [](int c) { return c == 1; }));

    // Adjacency iff face contact.
    std::vector<std::set<std::uint32_t>> expect(seg.size());
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                const auto a = seg.label_at(linear_index(d, x, y, z));
                const VoxelCoord nbs[3] = {{x + 1, y, z}, {x, y + 1, z}, {x, y, z + 1}};
                for (const auto& n : nbs) {
                    if (!in_bounds(d, n)) continue;
                    const auto b = seg.label_at(linear_index(d, n));
                    if (a != b) {
                        expect[a].insert(b);
                        expect[b].insert(a);
                    }
                }
            }
    for (std::uint32_t id = 0; id < seg.size(); ++id) {
        const auto& nb = seg.neighbors(id);
        CHECK(std::vector<std::uint32_t>(expect[id].begin(), expect[id].end()) == nb);
    }
}

RasterVolume two_tone(int w, int h) {
    RasterVolume v({w, h, 1});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) v.set(x, y, 0, x < w / 2 ? Rgb{0, 0, 0} : Rgb{255, 255, 255});
    return v;
}

/// Smooth random color field: blocky patches plus noise, so SLIC has structure.
RasterVolume patchy(Dims d, std::uint64_t seed, int cell = 12) {
    Rng rng(seed);
    std::map<std::array<int, 3>, Rgb> patch;
    RasterVolume v(d);
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x) {
                const std::array<int, 3> key{x / cell, y / cell, z / cell};
                auto it = patch.find(key);
                if (it == patch.end()) {
                    it = patch.emplace(key, Rgb{static_cast<std::uint8_t>(rng.uniform_index(256)),
                                                static_cast<std::uint8_t>(rng.uniform_index(256)),
                                                static_cast<std::uint8_t>(rng.uniform_index(256))})
                             .first;
                }
                Rgb c = it->second;
                for (auto& ch : c) ch = static_cast<std::uint8_t>(std::clamp<int>(ch + static_cast<int>(rng.uniform_index(21)) - 10, 0, 255));
                v.set(x, y, z, c);
            }
    return v;
}

}  // namespace

TEST_CASE("grid step and auto size") {
    CHECK(grid_step(64, 2) == 8);
    CHECK(grid_step(64, 3) == 4);
    CHECK(grid_step(2, 2) == 1);
    CHECK(auto_target_size(3'200'000) == 64);
    CHECK(auto_target_size(10) == 16);
    CHECK(auto_target_size(1'000'000'000'000ull) == 4096);
}

TEST_CASE("constant image reproduces the initial grid") {
    RasterVolume vol({80, 80, 1}, Rgb{90, 120, 30});
    const auto seg = generate_supervoxels(vol, {64, 10, true});
    REQUIRE(seg.size() == 100u);
    for (const auto& sv : seg.supervoxels()) CHECK(sv.size == 64u);
    check_structure(seg, vol);
    // Cells are the 8x8 grid blocks.
    for (int y = 0; y < 80; ++y)
        for (int x = 0; x < 80; ++x) CHECK(seg.label_of({x, y, 0}) == seg.label_of({x / 8 * 8, y / 8 * 8, 0}));
    CHECK(seg.label_of({0, 0, 0}) == 0u);

    // Interior cell has 4 neighbours, corner cell 2.
    const auto interior = seg.label_of({44, 44, 0});
    const auto corner = seg.label_of({0, 0, 0});
    CHECK(seg.neighbors(interior).size() == 4u);
    CHECK(seg.neighbors(corner).size() == 2u);
    CHECK_THROWS_AS(seg.label_of({80, 0, 0}), PreconditionError);
    CHECK_THROWS_AS(seg.label_of({-1, 0, 0}), PreconditionError);
    CHECK_THROWS(seg.neighbors(100));

    const auto& sv = seg.at(interior);
    for (const auto& r : sv.runs) CHECK(seg.label_of(r.start) == interior);
}

TEST_CASE("two-tone image gives colour-homogeneous supervoxels") {
    const auto vol = two_tone(16, 16);
    const auto seg = generate_supervoxels(vol, {64, 10, true});
    check_structure(seg, vol);
    for (const auto& sv : seg.supervoxels()) {
        std::set<Rgb> colors;
        for (const auto& r : sv.runs)
            for (std::uint32_t k = 0; k < r.length; ++k)
                colors.insert(vol.rgb(r.start.x + static_cast<int>(k), r.start.y, r.start.z));
        CHECK(colors.size() == 1u);
    }
}

TEST_CASE("random images: partition, count, connectivity, determinism") {
    for (std::uint64_t s = 0; s < 12; ++s) {
        const Dims d{60 + static_cast<int>(s % 5) * 7, 50 + static_cast<int>(s % 3) * 9, 1};
        const auto vol = patchy(d, s);
        const int target = 36 + static_cast<int>(s % 4) * 16;
        SlicDiagnostics diag;
        const auto seg = generate_supervoxels(vol, {target, 10, true}, s, &diag);
        check_structure(seg, vol);
        const double expected = std::floor(static_cast<double>(d.count()) / target);
        CHECK(std::abs(static_cast<double>(seg.size()) - expected) <= 0.1 * expected);
        for (std::uint32_t id = 0; id < seg.size(); ++id) CHECK(is_face_connected(seg, id));
        for (std::size_t i = 1; i < diag.objective.size(); ++i) {
            CHECK(diag.objective[i] <= diag.objective[i - 1] * (1 + 1e-12));
        }
        CHECK(generate_supervoxels(vol, {target, 10, true}, s) == seg);
    }
}

TEST_CASE("3D volume partitions into connected supervoxels") {
    const auto vol = patchy({24, 20, 12}, 5);
    const auto seg = generate_supervoxels(vol, {64, 10, true});
    check_structure(seg, vol);
    const double expected = std::floor(static_cast<double>(vol.voxel_count()) / 64);
    CHECK(std::abs(static_cast<double>(seg.size()) - expected) <= 0.1 * expected);
    for (std::uint32_t id = 0; id < seg.size(); ++id) CHECK(is_face_connected(seg, id));
}

TEST_CASE("result is independent of worker count") {
    const auto vol = patchy({70, 64, 1}, 42);
    setenv("SVSEG_THREADS", "1", 1);
    const auto a = generate_supervoxels(vol, {50, 10, true});
    setenv("SVSEG_THREADS", "4", 1);
    const auto b = generate_supervoxels(vol, {50, 10, true});
    unsetenv("SVSEG_THREADS");
    CHECK(a == b);
}

TEST_CASE("generation preconditions") {
    RasterVolume small({4, 4, 1});
    CHECK_THROWS_AS(generate_supervoxels(small, {17, 10, true}), PreconditionError);
    CHECK_THROWS_AS(generate_supervoxels(small, {1, 10, true}), PreconditionError);
    CHECK_THROWS_AS(generate_supervoxels(RasterVolume(), {16, 10, true}), PreconditionError);
}

TEST_CASE("boundary mask") {
    RasterVolume vol({4, 4, 1});
    std::vector<std::uint32_t> one(16, 0);
    const auto single = Oversegmentation::from_label_field(vol, one, 16);
    CHECK(boundary_mask(single).count() == 0u);

    std::vector<std::uint32_t> split(16);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) split[static_cast<std::size_t>(y * 4 + x)] = x < 2 ? 0 : 1;
    const auto two = Oversegmentation::from_label_field(vol, split, 8);
    const auto m = boundary_mask(two);
    CHECK(m.count() == 8u);
    for (int y = 0; y < 4; ++y) {
        CHECK(m[static_cast<std::size_t>(y * 4 + 1)]);
        CHECK(m[static_cast<std::size_t>(y * 4 + 2)]);
        CHECK_FALSE(m[static_cast<std::size_t>(y * 4 + 0)]);
    }
    std::vector<std::uint32_t> swapped(16);
    for (std::size_t i = 0; i < 16; ++i) swapped[i] = 1 - split[i];
    // from_label_field expects ids 0..n-1; swapping keeps that range.
    CHECK(boundary_mask(Oversegmentation::from_label_field(vol, swapped, 8)) == m);
}

TEST_CASE("cache round trip and corruption") {
    svseg::test::TempDir dir;
    const auto vol = patchy({40, 30, 1}, 8);
    const auto seg = generate_supervoxels(vol, {30, 10, true});
    save_oversegmentation(seg, dir / "s.svox");
    const auto back = load_oversegmentation(dir / "s.svox");
    CHECK(back == seg);

    auto bytes = serialize_oversegmentation(seg);
    CHECK(serialize_oversegmentation(deserialize_oversegmentation(bytes)) == bytes);
    auto wrong_magic = bytes;
    wrong_magic[0] = 'X';
    CHECK_THROWS_AS(deserialize_oversegmentation(wrong_magic), FormatError);
    auto flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x10;
    CHECK_THROWS_AS(deserialize_oversegmentation(flipped), FormatError);
    CHECK_THROWS_AS(deserialize_oversegmentation(std::span(bytes).first(10)), FormatError);

    RasterVolume other({41, 30, 1});
    CHECK_THROWS_AS(back.check_attached(other), DimensionMismatchError);
    CHECK_NOTHROW(back.check_attached(vol));
}

TEST_CASE("supervoxel statistics") {
    RasterVolume vol({4, 2, 1});
    for (int x = 0; x < 4; ++x) {
        vol.set(x, 0, 0, {static_cast<std::uint8_t>(x * 10), 0, 0});
        vol.set(x, 1, 0, {static_cast<std::uint8_t>(x * 10), 100, 0});
    }
    std::vector<std::uint32_t> labels{0, 0, 1, 1, 0, 0, 1, 1};
    const auto seg = Oversegmentation::from_label_field(vol, labels, 4);
    CHECK(seg.at(0).size == 4u);
    CHECK(seg.at(0).mean_color[0] == doctest::Approx(5.0));
    CHECK(seg.at(0).mean_color[1] == doctest::Approx(50.0));
    CHECK(seg.at(1).centroid[0] == doctest::Approx(2.5));
    CHECK(seg.at(1).centroid[1] == doctest::Approx(0.5));
    CHECK(seg.at(0).runs.size() == 2u);
}

TEST_CASE("CIELAB conversion reference points") {
    const auto white = srgb_to_lab({255, 255, 255});
    CHECK(white[0] == doctest::Approx(100.0).epsilon(1e-4));
    CHECK(std::abs(white[1]) < 1e-3);
    CHECK(std::abs(white[2]) < 1e-3);
    const auto black = srgb_to_lab({0, 0, 0});
    CHECK(std::abs(black[0]) < 1e-9);
    const auto red = srgb_to_lab({255, 0, 0});
    CHECK(red[0] == doctest::Approx(53.24).epsilon(1e-3));
    CHECK(red[1] == doctest::Approx(80.09).epsilon(1e-3));
    CHECK(red[2] == doctest::Approx(67.20).epsilon(1e-3));
}

TEST_CASE("validation density: 3.2 megapixels at size 64 gives about 50k supervoxels") {
    const auto vol = patchy({2048, 1563, 1}, 77);
    const auto seg = generate_supervoxels(vol, {64, 10, true});
    CHECK(std::abs(static_cast<double>(seg.size()) - 50000.0) <= 5000.0);
}
