#include "doctest.h"
#include "helpers.hpp"
#include "oracles.hpp"

#include "svseg/palette.hpp"

#include <algorithm>
#include <numeric>
#include <set>

using namespace svseg;

namespace {

Matrix to_matrix(const std::vector<std::vector<double>>& rows) {
    Matrix m(rows.size(), rows[0].size());
    for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t c = 0; c < rows[r].size(); ++c) m.at(r, c) = rows[r][c];
    return m;
}

DominantColorVector vector_of(std::vector<double> sorted, std::string id) {
    DominantColorVector v;
    v.image_id = std::move(id);
    v.sorted = std::move(sorted);
    return v;
}

/// Image made of horizontal bands with the given colors and row counts.
RasterVolume banded(const std::vector<std::pair<Rgb, int>>& bands, int width = 20) {
    int h = 0;
    for (const auto& b : bands) h += b.second;
    RasterVolume v(Dims{width, h, 1});
    int y = 0;
    for (const auto& [c, rows] : bands)
        for (int r = 0; r < rows; ++r, ++y)
            for (int x = 0; x < width; ++x) v.set(x, y, 0, c);
    return v;
}

}  // namespace

TEST_SUITE("kmeans") {
    TEST_CASE("square corners with k = 4") {
        const auto pts = to_matrix({{0, 0}, {1, 0}, {0, 1}, {1, 1}});
        KMeansParams p;
        p.k = 4;
        const auto r = kmeans(pts, p, 3);
        CHECK(r.inertia == 0.0);
        std::vector<int> a = r.assignments;
        std::sort(a.begin(), a.end());
        CHECK(a == std::vector<int>{0, 1, 2, 3});
    }

    TEST_CASE("k = 1 gives the mean") {
        const auto pts = to_matrix({{1, 2}, {3, 4}, {5, 0}});
        KMeansParams p;
        const auto r = kmeans(pts, p, 0);
        CHECK(r.centers.at(0, 0) == doctest::Approx(3.0));
        CHECK(r.centers.at(0, 1) == doctest::Approx(2.0));
        CHECK(r.inertia == doctest::Approx(8.0 + 8.0));
    }

    TEST_CASE("k larger than distinct points") {
        const auto pts = to_matrix({{1, 1}, {1, 1}, {2, 2}});
        KMeansParams p;
        p.k = 3;
        CHECK_THROWS_AS(kmeans(pts, p, 0), PreconditionError);
        p.allow_degenerate = true;
        CHECK(kmeans(pts, p, 0).inertia == 0.0);
    }

    TEST_CASE("best of 50 restarts reaches the partition optimum") {
        Rng rng(2024);
        for (int inst = 0; inst < 100; ++inst) {
            const std::size_t n = 3 + rng.uniform_index(10);
            const std::size_t dim = 1 + rng.uniform_index(6);
            const int k = 1 + static_cast<int>(rng.uniform_index(3));
            std::vector<std::vector<double>> rows(n, std::vector<double>(dim));
            for (auto& r : rows)
                for (auto& v : r) v = rng.uniform(-10, 10);
            KMeansParams p;
            p.k = k;
            p.restarts = 50;
            const auto res = kmeans(to_matrix(rows), p, static_cast<std::uint64_t>(inst));
            CHECK(std::abs(res.inertia - oracle::best_partition_inertia(rows, k)) < 1e-9);
        }
    }

    TEST_CASE("lloyd inertia never increases and runs are deterministic") {
        Rng rng(5);
        std::vector<std::vector<double>> rows(300, std::vector<double>(3));
        for (auto& r : rows)
            for (auto& v : r) v = rng.uniform(0, 255);
        const auto pts = to_matrix(rows);
        KMeansParams p;
        p.k = 7;
        p.restarts = 4;
        const auto a = kmeans(pts, p, 77);
        for (std::size_t t = 1; t < a.inertia_trace.size(); ++t) CHECK(a.inertia_trace[t] <= a.inertia_trace[t - 1] + 1e-9);
        const auto b = kmeans(pts, p, 77);
        CHECK(a.assignments == b.assignments);
        CHECK(a.centers.values == b.centers.values);
    }
}

TEST_SUITE("palette") {
    TEST_CASE("sorted color vector") {
        CHECK(sort_color_vector({{200, 10, 50}, {100, 220, 30}}) == std::vector<double>{100, 200, 10, 220, 30, 50});
        CHECK(sort_color_vector({{7, 8, 9}}) == std::vector<double>{7, 8, 9});
        CHECK(sort_color_vector({{200, 10, 50}, {100, 220, 30}}, ColorSort::lexicographic) ==
              std::vector<double>{100, 200, 220, 10, 30, 50});
    }

    TEST_CASE("sorted vector is invariant under palette permutations") {
        Rng rng(1);
        for (int k = 1; k <= 5; ++k) {
            std::vector<Color> pal(static_cast<std::size_t>(k));
            for (auto& c : pal)
                for (auto& v : c) v = static_cast<double>(rng.uniform_index(256));
            const auto ref = sort_color_vector(pal);
            const auto ref_lex = sort_color_vector(pal, ColorSort::lexicographic);
            std::vector<std::size_t> perm(static_cast<std::size_t>(k));
            std::iota(perm.begin(), perm.end(), std::size_t{0});
            do {
                std::vector<Color> p;
                for (auto i : perm) p.push_back(pal[i]);
                CHECK(sort_color_vector(p) == ref);
                CHECK(sort_color_vector(p, ColorSort::lexicographic) == ref_lex);
            } while (std::next_permutation(perm.begin(), perm.end()));
            for (int ch = 0; ch < 3; ++ch)
                CHECK(std::is_sorted(ref.begin() + ch * k, ref.begin() + (ch + 1) * k));
        }
    }

    TEST_CASE("uniform gray image") {
        const auto v = banded({{{128, 128, 128}, 10}});
        const auto d = dominant_colors(v, PaletteParams{}, 1);
        REQUIRE(d.palette.size() == 4);
        for (const auto& c : d.palette) CHECK(c == Color{128, 128, 128});
        CHECK(d.sorted == std::vector<double>(12, 128.0));
    }

    TEST_CASE("two-tone image") {
        const auto v = banded({{{200, 50, 50}, 7}, {{50, 50, 200}, 3}});
        PaletteParams p;
        p.k_c = 2;
        const auto d = dominant_colors(v, p, 4);
        REQUIRE(d.palette.size() == 2);
        CHECK(d.palette[0] == Color{200, 50, 50});
        CHECK(d.palette[1] == Color{50, 50, 200});
        CHECK(d.counts == std::vector<std::size_t>{140, 60});
        CHECK(d.inertia == 0.0);
    }

    TEST_CASE("subsampling is seeded and bounded") {
        const auto v = test::random_volume(Dims{64, 64, 1}, 3, 4);
        PaletteParams p;
        p.max_samples = 500;
        const auto a = dominant_colors(v, p, 11);
        const auto b = dominant_colors(v, p, 11);
        CHECK(a.sorted == b.sorted);
        std::size_t total = 0;
        for (auto c : a.counts) total += c;
        CHECK(total == 500);
        for (double x : a.sorted) {
            CHECK(x >= 0.0);
            CHECK(x <= 255.0);
        }
    }
}

TEST_SUITE("dataset clustering") {
    TEST_CASE("two far-apart batches") {
        std::vector<DominantColorVector> vs;
        Rng rng(6);
        for (int i = 0; i < 10; ++i) {
            std::vector<double> s(12);
            for (auto& x : s) x = (i < 5 ? 40.0 : 200.0) + rng.uniform(-5, 5);
            vs.push_back(vector_of(s, "img" + std::to_string(i)));
        }
        const auto c = cluster_images(vs, 2, 9);
        for (int i = 1; i < 5; ++i) CHECK(c.assignments[static_cast<std::size_t>(i)] == c.assignments[0]);
        for (int i = 6; i < 10; ++i) CHECK(c.assignments[static_cast<std::size_t>(i)] == c.assignments[5]);
        CHECK(c.assignments[0] != c.assignments[5]);
    }

    TEST_CASE("six clusters with optimal prototypes") {
        std::vector<DominantColorVector> vs;
        Rng rng(8);
        for (int i = 0; i < 22; ++i) {
            std::vector<double> s(12);
            for (auto& x : s) x = rng.uniform(0, 255);
            vs.push_back(vector_of(s, std::to_string(i)));
        }
        const auto c = cluster_images(vs, 6, 1);
        CHECK(c.centers.rows == 6);
        CHECK(c.prototypes.size() == 6);
        for (std::size_t k = 0; k < 6; ++k) {
            REQUIRE(c.prototypes[k].has_value());
            const auto p = *c.prototypes[k];
            CHECK(c.assignments[p] == static_cast<int>(k));
            auto dist = [&](std::size_t i) {
                double s = 0;
                for (std::size_t j = 0; j < 12; ++j) s += (vs[i].sorted[j] - c.centers.at(k, j)) * (vs[i].sorted[j] - c.centers.at(k, j));
                return s;
            };
            for (std::size_t i = 0; i < vs.size(); ++i)
                if (c.assignments[i] == static_cast<int>(k)) CHECK(dist(i) >= dist(p));
        }
        CHECK_THROWS_AS(cluster_images(vs, 23, 1), PreconditionError);
    }

    TEST_CASE("identical images") {
        std::vector<DominantColorVector> vs;
        for (int i = 0; i < 5; ++i) vs.push_back(vector_of(std::vector<double>(6, 10.0), std::to_string(i)));
        const auto c = cluster_images(vs, 3, 2);
        std::set<int> used(c.assignments.begin(), c.assignments.end());
        CHECK(used.size() == 1);
        CHECK(c.inertia == 0.0);
        int with_proto = 0;
        for (const auto& p : c.prototypes) with_proto += p.has_value();
        CHECK(with_proto == 1);
        CHECK(c.prototypes[static_cast<std::size_t>(c.assignments[0])] == std::size_t{0});
    }

    TEST_CASE("elbow curve") {
        Rng rng(12);
        for (int inst = 0; inst < 10; ++inst) {
            std::vector<DominantColorVector> vs;
            const int n = 6 + inst;
            for (int i = 0; i < n; ++i) {
                std::vector<double> s(6);
                for (auto& x : s) x = rng.uniform(0, 255);
                vs.push_back(vector_of(s, std::to_string(i)));
            }
            const auto curve = elbow_scan(vs, 1, n, static_cast<std::uint64_t>(inst));
            REQUIRE(curve.size() == static_cast<std::size_t>(n));
            for (std::size_t k = 1; k < curve.size(); ++k) CHECK(curve[k].inertia <= curve[k - 1].inertia + 1e-6);
            CHECK(curve.back().inertia == doctest::Approx(0.0));
            double total = 0;
            for (std::size_t j = 0; j < 6; ++j) {
                double mean = 0;
                for (const auto& v : vs) mean += v.sorted[j];
                mean /= n;
                for (const auto& v : vs) total += (v.sorted[j] - mean) * (v.sorted[j] - mean);
            }
            CHECK(curve.front().inertia == doctest::Approx(total));
        }
    }

    TEST_CASE("manifest round trip") {
        std::vector<DominantColorVector> vs;
        std::vector<std::string> paths;
        for (int i = 0; i < 4; ++i) {
            vs.push_back(vector_of(std::vector<double>(3, i < 2 ? 0.0 : 100.0 + i), "im" + std::to_string(i)));
            paths.push_back("/data/im" + std::to_string(i) + ".png");
        }
        const auto c = cluster_images(vs, 2, 3);
        const auto m = make_manifest(vs, paths, c, PaletteParams{}, 3);
        test::TempDir dir;
        save_manifest(m, dir / "clusters.json");
        const auto back = load_manifest(dir / "clusters.json");
        REQUIRE(back.images.size() == 4);
        CHECK(back.k_i == 2);
        CHECK(back.k_c == 4);
        CHECK(back.images[3].path == "/data/im3.png");
        for (int k = 0; k < 2; ++k) {
            REQUIRE(back.prototype(k) != nullptr);
            CHECK(back.prototype(k)->cluster == k);
            CHECK(back.members(k).size() == 2);
        }
        CHECK(back.find("im2")->cluster == back.find("im3")->cluster);
        CHECK_THROWS_AS(parse_manifest("{}"), FormatError);
        CHECK_THROWS_AS(parse_manifest("not json"), FormatError);
    }
}
