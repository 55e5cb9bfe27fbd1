#include "doctest.h"
#include "service_fixture.hpp"

#include "svseg/evalharness.hpp"
#include "svseg/workbench/project.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

using namespace svseg;
using svseg::test::ServiceFixture;
using svseg::test::TempDir;
using nlohmann::json;

namespace {

struct CliResult {
    int status = -1;
    std::string out;
    std::string err;
};

std::string quote(const std::string& s) {
    std::string q = "'";
    for (char c : s) q += c == '\'' ? std::string("'\\''") : std::string(1, c);
    return q + "'";
}

class Cli {
public:
    Cli(std::filesystem::path root, std::filesystem::path config) : root_(std::move(root)), config_(std::move(config)) {}

    CliResult run(const std::vector<std::string>& args) const {
        std::string cmd = quote(SVSEG_CLI_PATH) + " --root " + quote(root_.string());
        if (!config_.empty()) cmd += " --config " + quote(config_.string());
        for (const auto& a : args) cmd += " " + quote(a);
        cmd += " >" + quote((scratch_ / "out.txt").string()) + " 2>" + quote((scratch_ / "err.txt").string());
        const int raw = std::system(cmd.c_str());
        CliResult r;
        r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
        r.out = read_file_text(scratch_ / "out.txt");
        r.err = read_file_text(scratch_ / "err.txt");
        return r;
    }

private:
    std::filesystem::path root_;
    std::filesystem::path config_;
    TempDir scratch_;
};

SynthSpec tiny_spec() {
    SynthSpec s;
    s.dims = {96, 96, 1};
    s.batches = 2;
    s.images_per_batch = 2;
    s.min_nuclei = 4;
    s.max_nuclei = 6;
    s.min_lesions = 1;
    s.max_lesions = 2;
    s.vessels = 1;
    s.seed = 5;
    return s;
}

WorkbenchConfig quick_config() {
    WorkbenchConfig c;
    c.target_size = 32;
    c.n_trees = 30;
    c.min_object_supervoxels = 1;
    c.smooth_radius = 1;
    c.k_i = 2;
    c.cluster_seed = 4;
    return c;
}

std::vector<std::uint8_t> artifact(const std::filesystem::path& project_dir, std::optional<std::string> ProjectState::*field) {
    const auto p = Project::open(project_dir);
    const auto name = p->state().*field;
    REQUIRE(name.has_value());
    return read_file_bytes(project_dir / *name);
}

}  // namespace

TEST_CASE("usage errors and help") {
    TempDir root;
    Cli cli(root.path(), {});
    CHECK(cli.run({}).status != 0);
    CHECK(cli.run({"--help"}).status == 0);
    CHECK(cli.run({"frobnicate"}).status != 0);
    CHECK(cli.run({"preprocess"}).status != 0);  // --project missing
}

TEST_CASE("diagnostics name the violated precondition") {
    TempDir root;
    TempDir data;
    const auto img = generate_synth_image(tiny_spec(), 0, 0);
    write_volume(img.volume, data / "img.png");
    Cli cli(root.path(), {});

    auto r = cli.run({"train", "--project", "nope"});
    CHECK(r.status == 4);
    CHECK(r.err.find("unknown project") != std::string::npos);

    r = cli.run({"preprocess", "--project", "p"});
    CHECK(r.status == 3);
    CHECK(r.err.find("--image required") != std::string::npos);

    ProjectStore(root.path()).create("p", data / "img.png");
    r = cli.run({"train", "--project", "p"});
    CHECK(r.status == 3);
    CHECK(r.err.find("preprocess required") != std::string::npos);
    r = cli.run({"segment", "--project", "p"});
    CHECK(r.status == 3);
    CHECK(r.err.find("predict required") != std::string::npos);
    r = cli.run({"preprocess", "--project", "p", "--size", "lots"});
    CHECK(r.status == 2);
    r = cli.run({"preprocess", "--project", "p", "--features", "nothing"});
    CHECK(r.status == 3);
    r = cli.run({"reuse", "--out", (data / "o").string()});
    CHECK(r.status == 3);
    CHECK(r.err.find("--manifest or --dataset") != std::string::npos);
}

TEST_CASE("synth and evaluate") {
    TempDir root;
    TempDir out;
    Cli cli(root.path(), {});
    auto r = cli.run({"synth", "--out", out.path().string(), "--batches", "1", "--per-batch", "2", "--width", "96",
                      "--height", "96", "--min-nuclei", "4", "--max-nuclei", "6", "--min-lesions", "1", "--max-lesions", "2",
                      "--seed", "3"});
    REQUIRE(r.status == 0);
    CHECK(std::filesystem::exists(out / "b0_i0.png"));
    CHECK(std::filesystem::exists(out / "b0_i1_gold.csv"));
    CHECK(std::filesystem::exists(out / "corpus.json"));

    r = cli.run({"evaluate", "--labels", (out / "b0_i0_truth.png").string(), "--gold", (out / "b0_i0_gold.csv").string(),
                 "--mask"});
    REQUIRE(r.status == 0);
    CHECK(json::parse(r.out)["f1"] == 1.0);
    r = cli.run({"evaluate", "--labels", (out / "b0_i0_truth.png").string(), "--gold", (out / "corpus.json").string()});
    CHECK(r.status != 0);
}

TEST_CASE("CLI and HTTP produce byte-identical artifacts") {
    const auto config = quick_config();
    TempDir data;
    const auto spec = tiny_spec();
    const auto corpus = generate_synth_corpus(spec);
    save_synth_corpus(corpus, spec, data.path());
    write_file_atomic(data / "svseg.conf", config.format());
    const auto strokes = simulate_initial_strokes(corpus[0].truth, AnnotatorParams{}, 3);
    write_file_atomic(data / "strokes.json", format_strokes(strokes));
    const auto image = (data / (corpus[0].id + ".png")).string();

    // CLI path.
    TempDir cli_root;
    Cli cli(cli_root.path(), data / "svseg.conf");
    REQUIRE(cli.run({"preprocess", "--project", "p", "--image", image}).status == 0);
    REQUIRE(cli.run({"train", "--project", "p", "--strokes", (data / "strokes.json").string()}).status == 0);
    REQUIRE(cli.run({"predict", "--project", "p"}).status == 0);
    auto r = cli.run({"segment", "--project", "p", "--out", (data / "cli_seg.png").string()});
    REQUIRE(r.status == 0);
    const auto objects = json::parse(r.out)["objects"].get<int>();
    CHECK(objects > 0);

    // HTTP path.
    ServiceFixture f(config);
    REQUIRE(f.post("/api/projects", {{"id", "p"}, {"image", image}})->status == 201);
    REQUIRE(f.run_job("/api/projects/p/preprocess")["state"] == "done");
    REQUIRE(f.client().Put("/api/projects/p/strokes", format_strokes(strokes), "application/json")->status == 200);
    REQUIRE(f.run_job("/api/projects/p/train")["state"] == "done");
    REQUIRE(f.run_job("/api/projects/p/predict")["state"] == "done");
    REQUIRE(f.run_job("/api/projects/p/segment")["state"] == "done");

    const auto cli_dir = cli_root / "projects" / "p";
    const auto http_dir = f.root() / "projects" / "p";
    CHECK(artifact(cli_dir, &ProjectState::supervoxels) == artifact(http_dir, &ProjectState::supervoxels));
    CHECK(artifact(cli_dir, &ProjectState::features) == artifact(http_dir, &ProjectState::features));
    CHECK(artifact(cli_dir, &ProjectState::model) == artifact(http_dir, &ProjectState::model));
    CHECK(artifact(cli_dir, &ProjectState::probability) == artifact(http_dir, &ProjectState::probability));
    CHECK(artifact(cli_dir, &ProjectState::segmentation) == artifact(http_dir, &ProjectState::segmentation));
    CHECK(read_file_bytes(data / "cli_seg.png") == artifact(http_dir, &ProjectState::segmentation));
    CHECK(read_file_text(cli_dir / "strokes.json") == read_file_text(http_dir / "strokes.json"));

    // The default threshold equals passing 0.5 explicitly.
    REQUIRE(cli.run({"segment", "--project", "p", "--threshold", "0.5", "--out", (data / "cli_seg05.png").string()})
                .status == 0);
    CHECK(read_file_bytes(data / "cli_seg05.png") == read_file_bytes(data / "cli_seg.png"));
    REQUIRE(cli.run({"segment", "--project", "p", "--threshold", "0.9", "--out", (data / "cli_seg09.png").string()})
                .status == 0);
    CHECK(read_colorized_labels(data / "cli_seg09.png").max_label() <= static_cast<std::uint32_t>(objects));

    // Exported model applied to another project through --model.
    REQUIRE(cli.run({"preprocess", "--project", "q", "--image", (data / (corpus[1].id + ".png")).string()}).status == 0);
    const auto model_file = cli_dir / *Project::open(cli_dir)->state().model;
    r = cli.run({"predict", "--project", "q", "--model", model_file.string()});
    CHECK(r.status == 0);
    REQUIRE(cli.run({"preprocess", "--project", "lh", "--image", image, "--features", "lh"}).status == 0);
    r = cli.run({"predict", "--project", "lh", "--model", model_file.string()});
    CHECK(r.status == 3);
    CHECK(r.err.find("layout") != std::string::npos);
}

TEST_CASE("cluster and reuse agree between CLI and HTTP") {
    const auto config = quick_config();
    TempDir data;
    const auto spec = tiny_spec();
    const auto corpus = generate_synth_corpus(spec);
    save_synth_corpus(corpus, spec, data.path());
    write_file_atomic(data / "svseg.conf", config.format());
    std::vector<std::string> images;
    for (const auto& img : corpus) images.push_back((data / (img.id + ".png")).string());

    TempDir cli_root;
    Cli cli(cli_root.path(), data / "svseg.conf");
    auto args = std::vector<std::string>{"cluster", "--out", (data / "manifest.json").string()};
    args.insert(args.end(), images.begin(), images.end());
    REQUIRE(cli.run(args).status == 0);
    const auto manifest = load_manifest(data / "manifest.json");
    CHECK(manifest.images.size() == 4);

    auto elbow = std::vector<std::string>{"cluster", "--elbow", "3"};
    elbow.insert(elbow.end(), images.begin(), images.end());
    auto r = cli.run(elbow);
    REQUIRE(r.status == 0);
    CHECK(r.out.rfind("k,inertia\n1,", 0) == 0);

    // Train each prototype through the CLI and collect PROTOTYPE=MODEL pairs.
    std::vector<std::string> model_args;
    for (const auto& e : manifest.images) {
        if (!e.is_prototype) continue;
        const SynthImage* img = nullptr;
        for (const auto& c : corpus)
            if (c.id == e.id) img = &c;
        REQUIRE(img);
        const auto sf = data / (e.id + "_strokes.json");
        write_file_atomic(sf, format_strokes(simulate_initial_strokes(img->truth, AnnotatorParams{}, 3)));
        REQUIRE(cli.run({"preprocess", "--project", e.id, "--image", e.path}).status == 0);
        REQUIRE(cli.run({"train", "--project", e.id, "--strokes", sf.string()}).status == 0);
        const auto dir = cli_root / "projects" / e.id;
        model_args.push_back("--model");
        model_args.push_back(e.id + "=" + (dir / *Project::open(dir)->state().model).string());
    }
    auto reuse = std::vector<std::string>{"reuse", "--manifest", (data / "manifest.json").string(), "--out",
                                          (data / "cli_reuse").string(), "--gold-dir", data.path().string()};
    reuse.insert(reuse.end(), model_args.begin(), model_args.end());
    r = cli.run(reuse);
    REQUIRE(r.status == 0);
    const auto cli_results = json::parse(read_file_text(data / "cli_reuse" / "results.json"));
    REQUIRE(cli_results["results"].size() == 2);
    for (const auto& item : cli_results["results"]) CHECK(item["cluster"] == item["model_cluster"]);

    // Missing model for one prototype.
    auto partial = std::vector<std::string>{"reuse", "--manifest", (data / "manifest.json").string(), "--out",
                                            (data / "partial").string(), model_args[0], model_args[1]};
    r = cli.run(partial);
    CHECK(r.status == 3);
    CHECK(r.err.find("missing model for prototype") != std::string::npos);

    // HTTP path on the same images: same manifest, same per-image label files.
    ServiceFixture f(config);
    json list = json::array();
    for (const auto& p : images) list.push_back(p);
    REQUIRE(f.post("/api/datasets", {{"id", "d"}, {"images", list}})->status == 201);
    REQUIRE(f.run_job("/api/datasets/d/cluster")["state"] == "done");
    const auto http_manifest = parse_manifest(f.client().Get("/api/datasets/d/manifest")->body);
    CHECK(format_manifest(http_manifest) == format_manifest(manifest));
    const auto ds = json::parse(f.client().Get("/api/datasets/d")->body);
    for (const auto& [cluster, pid] : ds["prototype_projects"].items()) {
        const auto* proto = manifest.prototype(std::stoi(cluster));
        const std::string id = pid.get<std::string>();
        REQUIRE(f.run_job("/api/projects/" + id + "/preprocess")["state"] == "done");
        f.client().Put("/api/projects/" + id + "/strokes", read_file_text(data / (proto->id + "_strokes.json")),
                       "application/json");
        REQUIRE(f.run_job("/api/projects/" + id + "/train")["state"] == "done");
    }
    const auto job = f.run_job("/api/datasets/d/reuse", {{"mode", "intra"}, {"gold_dir", data.path().string()}});
    REQUIRE(job["state"] == "done");
    const auto http_out = f.root() / "datasets" / "d" / "reuse" / "intra";
    for (const auto& item : cli_results["results"]) {
        const auto file = item["labels"].get<std::string>();
        CHECK(read_file_bytes(data / "cli_reuse" / file) == read_file_bytes(http_out / file));
    }
    CHECK(read_file_text(data / "cli_reuse" / "summary.json") == read_file_text(http_out / "summary.json"));

    // Dataset-backed CLI reuse reads the prototype projects' models.
    TempDir root2;
    Cli cli2(root2.path(), data / "svseg.conf");
    auto reg = std::vector<std::string>{"cluster", "--dataset", "d"};
    reg.insert(reg.end(), images.begin(), images.end());
    REQUIRE(cli2.run(reg).status == 0);
    r = cli2.run({"reuse", "--dataset", "d", "--out", (data / "o2").string()});
    CHECK(r.status == 3);
    CHECK(r.err.find("train required") != std::string::npos);
}
