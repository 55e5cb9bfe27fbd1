#include "doctest.h"
#include "helpers.hpp"

#include "svseg/evalharness.hpp"
#include "svseg/features.hpp"
#include "svseg/palette.hpp"
#include "svseg/supervoxel.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

using namespace svseg;

namespace {

LabelImage grid_labels(Dims d, std::initializer_list<std::pair<VoxelCoord, std::uint32_t>> px) {
    LabelImage l(d);
    for (const auto& [c, v] : px) l.labels[linear_index(d, c)] = v;
    return l;
}

GoldStandard gold_of(std::vector<VoxelCoord> pts) {
    GoldStandard g;
    g.points = std::move(pts);
    return g;
}

SynthSpec small_spec() {
    SynthSpec s;
    s.dims = {96, 96, 1};
    s.batches = 2;
    s.images_per_batch = 2;
    s.min_nuclei = 4;
    s.max_nuclei = 6;
    s.min_lesions = 1;
    s.max_lesions = 2;
    s.vessels = 1;
    s.seed = 42;
    return s;
}

}  // namespace

TEST_CASE("gold standard parsing accepts headers, 2D and 3D rows") {
    auto g = parse_gold_standard("x,y\n3,4\n 5 , 6 \n\n", "img");
    REQUIRE(g.points.size() == 2);
    CHECK(g.points[1] == VoxelCoord{5, 6, 0});
    CHECK(g.image_id == "img");
    auto g3 = parse_gold_standard("1,2,3\r\n4,5,6\n");
    REQUIRE(g3.points.size() == 2);
    CHECK(g3.points[0] == VoxelCoord{1, 2, 3});
    CHECK_THROWS_AS(parse_gold_standard("1,2\nfoo,3\n"), FormatError);
    CHECK_THROWS_AS(parse_gold_standard("1,2\n1,2,3,4\n"), FormatError);

    test::TempDir tmp;
    save_gold_standard(g3, tmp / "g.csv");
    CHECK(load_gold_standard(tmp / "g.csv").points == g3.points);
}

TEST_CASE("gold standard validation rejects out-of-bounds and duplicate points") {
    CHECK_THROWS_AS(gold_of({{10, 0, 0}}).validate({10, 10, 1}), PreconditionError);
    CHECK_THROWS_AS(gold_of({{1, 1, 0}, {1, 1, 0}}).validate({10, 10, 1}), PreconditionError);
    CHECK_NOTHROW(gold_of({{1, 1, 0}, {1, 2, 0}}).validate({10, 10, 1}));
    LabelImage l({4, 4, 1});
    CHECK_THROWS_AS(match_objects(l, gold_of({{4, 0, 0}})), PreconditionError);
}

TEST_CASE("F1 from counts") {
    CHECK(f1_from_counts(9, 1, 1) == 0.9);
    CHECK(f1_from_counts(0, 0, 0) == 0.0);
    for (std::size_t n : {1u, 2u, 17u}) CHECK(f1_from_counts(n, 0, 0) == 1.0);
    const auto r = make_report(3, 1, 2);
    CHECK(r.precision == doctest::Approx(0.75));
    CHECK(r.recall == doctest::Approx(0.6));
    CHECK(make_report(0, 0, 4).precision == 0.0);
    CHECK(make_report(0, 3, 0).recall == 0.0);
    // Monotone in tp with fp, fn fixed.
    for (std::size_t fp = 0; fp < 4; ++fp)
        for (std::size_t fn = 0; fn < 4; ++fn)
            for (std::size_t tp = 0; tp < 10; ++tp) CHECK(f1_from_counts(tp + 1, fp, fn) >= f1_from_counts(tp, fp, fn));
}

TEST_CASE("match_objects on toy images") {
    const Dims d{9, 9, 1};
    SUBCASE("one object with an interior gold point") {
        auto l = grid_labels(d, {{{4, 4, 0}, 1}, {{4, 5, 0}, 1}});
        auto r = match_objects(l, gold_of({{4, 4, 0}}));
        CHECK(r.tp == 1);
        CHECK(r.fp == 0);
        CHECK(r.fn == 0);
        CHECK(r.f1 == 1.0);
    }
    SUBCASE("one object and no gold") {
        auto l = grid_labels(d, {{{4, 4, 0}, 1}});
        auto r = match_objects(l, gold_of({}));
        CHECK(r.tp == 0);
        CHECK(r.fp == 1);
        CHECK(r.fn == 0);
        CHECK(r.f1 == 0.0);
    }
    SUBCASE("hit, miss and isolated gold") {
        auto l = grid_labels(d, {{{1, 1, 0}, 1}, {{4, 1, 0}, 2}});
        auto r = match_objects(l, gold_of({{1, 1, 0}, {7, 7, 0}}));
        CHECK(r.tp == 1);
        CHECK(r.fp == 1);
        CHECK(r.fn == 1);
        CHECK(r.f1 == 0.5);
    }
    SUBCASE("a gold point next to an object is not a miss") {
        auto l = grid_labels(d, {{{4, 4, 0}, 1}});
        auto r = match_objects(l, gold_of({{5, 5, 0}}));
        CHECK(r.fn == 0);
        CHECK(r.tp == 0);
        CHECK(r.fp == 1);
        CHECK(match_objects(l, gold_of({{6, 4, 0}})).fn == 1);
    }
    SUBCASE("several gold points in one object give one tp") {
        auto l = grid_labels(d, {{{4, 4, 0}, 1}, {{5, 4, 0}, 1}});
        auto r = match_objects(l, gold_of({{4, 4, 0}, {5, 4, 0}}));
        CHECK(r.tp == 1);
        CHECK(r.fn == 0);
    }
    SUBCASE("3D neighbourhood spans slices") {
        const Dims d3{5, 5, 3};
        auto l = grid_labels(d3, {{{2, 2, 0}, 1}});
        CHECK(match_objects(l, gold_of({{3, 3, 1}})).fn == 0);
        CHECK(match_objects(l, gold_of({{2, 2, 2}})).fn == 1);
    }
}

TEST_CASE("match_objects properties on random label images") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const Dims d{12, 10, trial % 5 == 0 ? 3 : 1};
        LabelImage l(d);
        for (auto& v : l.labels) v = rng.uniform() < 0.3 ? static_cast<std::uint32_t>(rng.uniform_int(1, 6)) : 0;
        GoldStandard g;
        for (std::size_t i = 0; i < d.count(); ++i)
            if (rng.uniform() < 0.08) g.points.push_back(coord_of(d, i));
        const auto r = match_objects(l, g);
        std::set<std::uint32_t> objs(l.labels.begin(), l.labels.end());
        objs.erase(0);
        CHECK(r.tp + r.fp == objs.size());
        // Permuting label values does not change the report.
        std::vector<std::uint32_t> perm{0, 1, 2, 3, 4, 5, 6};
        std::vector<std::uint32_t> tail(perm.begin() + 1, perm.end());
        rng.shuffle(tail);
        std::copy(tail.begin(), tail.end(), perm.begin() + 1);
        LabelImage p = l;
        for (auto& v : p.labels) v = perm[v] * 7;
        const auto rp = match_objects(p, g);
        CHECK(rp.tp == r.tp);
        CHECK(rp.fp == r.fp);
        CHECK(rp.fn == r.fn);
    }
}

TEST_CASE("dataset summary: median, population sigma and quartiles") {
    std::vector<RunRecord> runs;
    auto add = [&](std::string method, std::string image, int cluster, std::size_t tp, std::size_t fp, std::size_t fn) {
        RunRecord r;
        r.method = std::move(method);
        r.image_id = std::move(image);
        r.cluster = cluster;
        r.report = make_report(tp, fp, fn);
        runs.push_back(r);
    };
    // F1 0.8, 0.9, 1.0
    add("dedicated", "a", 0, 4, 1, 1);
    add("dedicated", "b", 0, 9, 1, 1);
    add("dedicated", "c", 1, 5, 0, 0);
    add("inter", "a", 0, 1, 1, 0);
    const auto s = evaluate_dataset(runs);
    REQUIRE(s.methods.size() == 2);
    CHECK(s.methods[0].method == "dedicated");
    CHECK(s.methods[0].median_f1 == doctest::Approx(0.9));
    CHECK(s.methods[0].sigma_f1 == doctest::Approx(std::sqrt(0.02 / 3.0)).epsilon(1e-12));
    CHECK(s.methods[0].sigma_f1 == doctest::Approx(0.0816).epsilon(1e-3));
    CHECK(s.find("inter")->median_f1 == doctest::Approx(2.0 / 3.0));
    CHECK(s.find("inter")->sigma_f1 == 0.0);
    CHECK(s.find("missing") == nullptr);

    CHECK(quantile({1, 2, 3, 4}, 0.25) == doctest::Approx(1.75));
    CHECK(quantile({7}, 0.75) == 7);
    CHECK_THROWS_AS(quantile({}, 0.5), PreconditionError);

    const auto table = format_summary_table(s);
    CHECK(table.find("dedicated") != std::string::npos);
    CHECK(table.find("0.9000") != std::string::npos);
    const auto j = nlohmann::json::parse(summary_json(s));
    CHECK(j["methods"].size() == 2);
    CHECK(j["per_image"]["dedicated"].size() == 2);  // clusters 0 and 1
    CHECK(j["runs"].size() == 4);
}

TEST_CASE("per-image breakdown summarizes repeated runs by quartiles") {
    std::vector<RunRecord> runs;
    for (std::size_t tp = 1; tp <= 5; ++tp) {
        RunRecord r;
        r.method = "inter";
        r.image_id = "x";
        r.cluster = 2;
        r.model_source = "m" + std::to_string(tp);
        r.report = make_report(tp, 5 - tp, 0);
        runs.push_back(r);
    }
    const auto j = nlohmann::json::parse(summary_json(evaluate_dataset(runs)));
    const auto& img = j["per_image"]["inter"][0]["images"][0];
    CHECK(img["runs"] == 5);
    CHECK(img["median"].get<double>() == doctest::Approx(f1_from_counts(3, 2, 0)));
    CHECK(img.contains("q1"));
    CHECK(!img.contains("f1"));
}

TEST_CASE("synthetic corpus is reproducible and consistent with its gold standard") {
    const auto spec = small_spec();
    const auto a = generate_synth_corpus(spec);
    const auto b = generate_synth_corpus(spec);
    REQUIRE(a.size() == 4);
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].volume.data() == b[k].volume.data());
        CHECK(a[k].truth.labels == b[k].truth.labels);
        const auto& img = a[k];
        CHECK(img.batch == static_cast<int>(k) / 2);
        CHECK(img.gold.points.size() == img.truth.max_label());
        CHECK(img.gold.points.size() >= 4);
        CHECK(img.gold.points.size() <= 6);
        for (std::size_t g = 0; g < img.gold.points.size(); ++g) {
            CHECK(img.truth.labels[linear_index(img.truth.dims, img.gold.points[g])] == g + 1);
        }
        // Nuclei never touch: the truth mask has exactly one component each.
        CHECK(label_components(foreground_of(img.truth)).max_label() == img.truth.max_label());
        const auto r = match_objects(img.truth, img.gold);
        CHECK(r.f1 == 1.0);
    }
    auto other = spec;
    other.seed = 43;
    CHECK(generate_synth_corpus(other)[0].volume.data() != a[0].volume.data());
}

TEST_CASE("noise-free single nucleus corpus matches itself perfectly") {
    SynthSpec s;
    s.dims = {40, 40, 1};
    s.batches = 1;
    s.images_per_batch = 1;
    s.min_nuclei = s.max_nuclei = 1;
    s.min_lesions = s.max_lesions = 0;
    s.vessels = 0;
    s.noise = 0;
    s.alt_tissue_fraction = 0;
    const auto img = generate_synth_corpus(s).at(0);
    CHECK(match_objects(img.truth, img.gold).f1 == 1.0);
    // Two colors only.
    std::set<Rgb> colors;
    for (std::size_t i = 0; i < img.volume.voxel_count(); ++i) colors.insert(img.volume.rgb(i));
    CHECK(colors.size() == 2);
}

TEST_CASE("synthetic volumes carry gold points and non-touching nuclei in 3D") {
    SynthSpec s;
    s.dims = {48, 48, 12};
    s.batches = 1;
    s.images_per_batch = 1;
    s.min_nuclei = 3;
    s.max_nuclei = 5;
    s.min_radius = 3;
    s.max_radius = 4;
    s.min_lesions = s.max_lesions = 1;
    s.vessels = 1;
    const auto img = generate_synth_image(s, 0, 0);
    CHECK(img.gold.points.size() == img.truth.max_label());
    for (std::size_t g = 0; g < img.gold.points.size(); ++g)
        CHECK(img.truth.labels[linear_index(img.truth.dims, img.gold.points[g])] == g + 1);
    CHECK(label_components(foreground_of(img.truth)).max_label() == img.truth.max_label());
}

TEST_CASE("infeasible packing is reported") {
    SynthSpec s;
    s.dims = {32, 32, 1};
    s.batches = 1;
    s.images_per_batch = 1;
    s.min_nuclei = s.max_nuclei = 40;
    CHECK_THROWS_AS(generate_synth_corpus(s), PreconditionError);
    SynthSpec bad;
    bad.min_nuclei = 0;
    CHECK_THROWS_AS(bad.validate(), PreconditionError);
    bad = SynthSpec{};
    bad.batch_shifts = {{0, 0, 0}};
    CHECK_THROWS_AS(bad.validate(), PreconditionError);
}

TEST_CASE("batch shifts keep colors in range and separate batches in palette space") {
    SynthSpec s;
    s.batches = 2;
    s.images_per_batch = 3;
    s.shift_magnitude = 80;
    s.seed = 42;
    const auto corpus = generate_synth_corpus(s);
    const auto shift0 = s.shift_of(0), shift1 = s.shift_of(1);
    double norm = 0;
    for (int c = 0; c < 3; ++c) norm += (shift0[c] - shift1[c]) * (shift0[c] - shift1[c]);
    CHECK(std::sqrt(norm) == doctest::Approx(160.0));  // opposite points of the circle
    CHECK(shift0[0] + shift0[1] + shift0[2] == doctest::Approx(0.0).epsilon(1e-9));

    std::vector<DominantColorVector> v;
    for (const auto& img : corpus) v.push_back(dominant_colors(img.volume, PaletteParams{}, 3, img.id));
    auto dist = [&](std::size_t i, std::size_t j) {
        double d = 0;
        for (std::size_t c = 0; c < v[i].sorted.size(); ++c) d += (v[i].sorted[c] - v[j].sorted[c]) * (v[i].sorted[c] - v[j].sorted[c]);
        return std::sqrt(d);
    };
    double within = 0, between = 1e300;
    int pairs = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
        for (std::size_t j = i + 1; j < v.size(); ++j) {
            if (corpus[i].batch == corpus[j].batch) {
                within += dist(i, j);
                ++pairs;
            } else {
                between = std::min(between, dist(i, j));
            }
        }
    within /= pairs;
    CHECK(between > 5 * within);
    const auto clusters = cluster_images(v, 2, 9);
    for (std::size_t i = 0; i < v.size(); ++i)
        CHECK((clusters.assignments[i] == clusters.assignments[0]) == (corpus[i].batch == corpus[0].batch));
}

TEST_CASE("stain and noise variation are per batch and deterministic") {
    SynthSpec s = small_spec();
    s.stain_variation = 0.5;
    s.noise_variation = 0.5;
    const auto a0 = s.appearance_of(0), a1 = s.appearance_of(1);
    CHECK(a0.stain >= 0.5);
    CHECK(a0.stain <= 1.0);
    CHECK(a0.noise >= 4.0);
    CHECK(a0.noise <= 12.0);
    CHECK(a0.stain != a1.stain);
    CHECK(s.appearance_of(0).stain == a0.stain);
    s.stain_variation = 1.0;
    CHECK_THROWS_AS(s.validate(), PreconditionError);
}

TEST_CASE("saved corpus lists every image and reloads") {
    const auto spec = small_spec();
    const auto corpus = generate_synth_corpus(spec);
    test::TempDir tmp;
    save_synth_corpus(corpus, spec, tmp.path());
    const auto j = nlohmann::json::parse(read_file_text(tmp / "corpus.json"));
    REQUIRE(j["images"].size() == corpus.size());
    const auto& e = j["images"][1];
    const auto vol = load_volume(tmp / e["image"].get<std::string>());
    CHECK(vol.data() == corpus[1].volume.data());
    CHECK(load_gold_standard(tmp / e["gold"].get<std::string>()).points == corpus[1].gold.points);
    const auto mask = read_mask(tmp / e["truth"].get<std::string>());
    CHECK(foreground_of(mask) == foreground_of(corpus[1].truth));
}

TEST_CASE("scripted annotator strokes land on the right class") {
    SynthSpec s = small_spec();
    s.dims = {128, 128, 1};
    const auto img = generate_synth_image(s, 0, 0);
    AnnotatorParams ap;
    ap.initial_foreground = 3;
    ap.initial_background = 5;
    const auto strokes = simulate_initial_strokes(img.truth, ap, 1);
    int fg = 0, bg = 0;
    for (const auto& st : strokes) {
        for (auto i : rasterize_stroke(st, img.truth.dims)) CHECK((img.truth.labels[i] != 0) == (st.class_label == 1));
        (st.class_label ? fg : bg)++;
    }
    CHECK(fg == 3);
    CHECK(bg == 5);
    CHECK(simulate_initial_strokes(img.truth, ap, 1).size() == strokes.size());

    const auto seg = generate_supervoxels(img.volume, SlicParams{});
    ProbabilityMap wrong;
    wrong.p.assign(seg.size(), 0.0);  // everything background
    ap.corrections_per_round = 4;
    const auto fixes = simulate_corrections(img.truth, seg, wrong, ap);
    REQUIRE(fixes.size() == 4);
    for (const auto& st : fixes) {
        CHECK(st.class_label == 1);
        CHECK(img.truth.labels[linear_index(img.truth.dims, st.voxels.at(0))] != 0);
    }
    ProbabilityMap short_map;
    CHECK_THROWS_AS(simulate_corrections(img.truth, seg, short_map, ap), DimensionMismatchError);
}

TEST_CASE("interactive loop on a synthetic image recovers the nucleus count") {
    SynthSpec s;
    s.batches = 1;
    s.images_per_batch = 1;
    s.seed = 3;
    const auto img = generate_synth_image(s, 0, 0);
    const auto seg = generate_supervoxels(img.volume, SlicParams{});
    const FeatureConfig fc;
    const auto fm = compute_features(img.volume, seg, fc);
    AnnotatorParams ap;
    auto strokes = simulate_initial_strokes(img.truth, ap, 7);
    ClassifierSpec cs;
    cs.forest.n_trees = 100;
    cs.seed = 1;
    SegmentationParams sp;
    sp.min_object_size = supervoxel_multiple(seg, 1);
    sp.max_hole_size = supervoxel_multiple(seg, 3);
    sp.smooth_radius = 1;
    sp.watershed = true;
    LabelImage labels;
    for (int round = 0; round <= ap.rounds; ++round) {
        const auto model = train_model(cs, collect_training_data(strokes, seg, fm), fc);
        const auto prob = predict_proba(model, fm);
        labels = run_pipeline(prob, seg, sp);
        const auto more = simulate_corrections(img.truth, seg, prob, ap);
        strokes.insert(strokes.end(), more.begin(), more.end());
    }
    const double n = static_cast<double>(img.gold.points.size());
    CHECK(std::abs(static_cast<double>(labels.max_label()) - n) <= 0.05 * n + 0.5);
    CHECK(match_objects(labels, img.gold).f1 >= 0.9);
}
