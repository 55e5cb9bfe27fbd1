#include "doctest.h"
#include "service_fixture.hpp"

#include "svseg/evalharness.hpp"
#include "svseg/workbench/project.hpp"

using namespace svseg;
using svseg::test::ServiceFixture;
using svseg::test::TempDir;
using nlohmann::json;

namespace {

SynthSpec tiny_spec(Dims dims = {96, 96, 1}) {
    SynthSpec s;
    s.dims = dims;
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
    return c;
}

struct Corpus {
    TempDir dir;
    std::vector<SynthImage> images;
    std::filesystem::path path(std::size_t i) const { return dir / (images[i].id + ".png"); }
};

std::unique_ptr<Corpus> make_corpus(const SynthSpec& spec) {
    auto c = std::make_unique<Corpus>();
    c->images = generate_synth_corpus(spec);
    save_synth_corpus(c->images, spec, c->dir.path());
    return c;
}

bool is_png(const std::string& body) { return body.size() > 8 && body.compare(1, 3, "PNG") == 0; }

std::string error_of(const httplib::Result& r) { return json::parse(r->body)["error"].get<std::string>(); }

/// Creates, preprocesses and annotates a project through the API.
void annotated_project(ServiceFixture& f, const std::string& id, const Corpus& c, std::size_t image) {
    REQUIRE(f.post("/api/projects", {{"id", id}, {"image", c.path(image).string()}})->status == 201);
    REQUIRE(f.run_job("/api/projects/" + id + "/preprocess")["state"] == "done");
    const auto strokes = simulate_initial_strokes(c.images[image].truth, AnnotatorParams{}, 3);
    REQUIRE(f.client().Put("/api/projects/" + id + "/strokes", format_strokes(strokes), "application/json")->status ==
            200);
}

}  // namespace

TEST_CASE("health and unknown endpoints") {
    ServiceFixture f;
    auto r = f.client().Get("/api/health");
    REQUIRE(r);
    CHECK(r->status == 200);
    r = f.client().Get("/api/nothing-here");
    CHECK(r->status == 404);
    CHECK(json::parse(r->body).contains("error"));
    r = f.client().Get("/api/config");
    CHECK(json::parse(r->body)["config"].get<std::string>().find("target_size = 64") != std::string::npos);
}

TEST_CASE("project CRUD and error statuses") {
    ServiceFixture f(quick_config());
    const auto corpus = make_corpus(tiny_spec());
    auto r = f.post("/api/projects", {{"id", "p1"}, {"image", corpus->path(0).string()}});
    REQUIRE(r->status == 201);
    CHECK(json::parse(r->body)["id"] == "p1");
    CHECK(json::parse(r->body)["dims"][0] == 96);

    CHECK(f.post("/api/projects", {{"id", "p1"}, {"image", corpus->path(0).string()}})->status == 409);
    CHECK(f.post("/api/projects", {{"id", "../bad"}, {"image", corpus->path(0).string()}})->status == 422);
    CHECK(f.post("/api/projects", {{"id", "nofile"}, {"image", (corpus->dir / "none.png").string()}})->status == 422);
    CHECK(f.post("/api/projects", {{"id", "p2"}})->status == 400);
    CHECK(f.client().Post("/api/projects", "{oops", "application/json")->status == 400);

    // Id derived from the file stem, de-duplicated.
    r = f.post("/api/projects", {{"image", corpus->path(1).string()}});
    REQUIRE(r->status == 201);
    CHECK(json::parse(r->body)["id"] == corpus->images[1].id);
    r = f.post("/api/projects", {{"image", corpus->path(1).string()}});
    CHECK(json::parse(r->body)["id"] == corpus->images[1].id + "-2");

    r = f.client().Get("/api/projects");
    CHECK(json::parse(r->body)["projects"].size() == 3);
    CHECK(f.client().Get("/api/projects/p1")->status == 200);
    CHECK(f.client().Get("/api/projects/zzz")->status == 404);
    CHECK(f.client().Get("/api/projects/zzz/slice")->status == 404);
    CHECK(f.post("/api/projects/zzz/train")->status == 404);
    CHECK(f.client().Get("/api/jobs/job-12345")->status == 404);
}

TEST_CASE("preconditions map to 422") {
    ServiceFixture f(quick_config());
    const auto corpus = make_corpus(tiny_spec());
    REQUIRE(f.post("/api/projects", {{"id", "p"}, {"image", corpus->path(0).string()}})->status == 201);

    auto r = f.post("/api/projects/p/train");
    CHECK(r->status == 422);
    CHECK(error_of(r) == "preprocess required");
    r = f.post("/api/projects/p/predict");
    CHECK(r->status == 422);
    r = f.post("/api/projects/p/segment");
    CHECK(r->status == 422);
    CHECK(error_of(r) == "predict required");
    CHECK(f.client().Get("/api/projects/p/slice?overlay=probability")->status == 422);
    CHECK(f.client().Get("/api/projects/p/slice?overlay=boundaries")->status == 422);
    CHECK(f.client().Get("/api/projects/p/slice?overlay=segmentation")->status == 422);
    CHECK(f.client().Get("/api/projects/p/model")->status == 422);
    CHECK(f.client().Get("/api/projects/p/segmentation")->status == 422);
    CHECK(f.client().Delete("/api/projects/p/strokes/last")->status == 422);

    REQUIRE(f.run_job("/api/projects/p/preprocess")["state"] == "done");
    r = f.post("/api/projects/p/train");
    CHECK(r->status == 422);
    CHECK(error_of(r).find("strokes required") != std::string::npos);
    r = f.post("/api/projects/p/strokes", {{"class", 1}, {"path", {{10, 10}}}, {"radius", 2}});
    CHECK(r->status == 201);
    r = f.post("/api/projects/p/train");
    CHECK(r->status == 422);
    CHECK(error_of(r).find("class") != std::string::npos);
    r = f.post("/api/projects/p/predict");
    CHECK(error_of(r) == "train required");

    // Invalid parameters.
    CHECK(f.post("/api/projects/p/preprocess", {{"params", {{"target_size", "huge"}}}})->status == 400);
    CHECK(f.post("/api/projects/p/preprocess", {{"params", {{"bogus", 1}}}})->status == 400);
    CHECK(f.post("/api/projects/p/preprocess", {{"params", {{"features", "nothing"}}}})->status == 422);
    CHECK(f.client().Get("/api/projects/p/slice?overlay=glitter")->status == 400);
    CHECK(f.client().Get("/api/projects/p/slice?index=500")->status == 422);
    CHECK(f.client().Get("/api/projects/p/slice?index=abc")->status == 400);
    CHECK(f.client().Get("/api/projects/p/slice?blend=2")->status == 422);
    CHECK(f.post("/api/projects/p/strokes", {{"class", 1}, {"path", {{500, 10}}}})->status == 422);
}

TEST_CASE("interactive loop over HTTP") {
    ServiceFixture f(quick_config());
    const auto corpus = make_corpus(tiny_spec());
    annotated_project(f, "p", *corpus, 0);

    // Slices.
    auto r = f.client().Get("/api/projects/p/slice");
    REQUIRE(r->status == 200);
    CHECK(r->get_header_value("Content-Type") == "image/png");
    CHECK(is_png(r->body));
    CHECK(f.client().Get("/api/projects/p/slice?overlay=boundaries&blend=0.7")->status == 200);
    CHECK(f.client().Get("/api/projects/p/slice?axis=y&index=5")->status == 200);

    // Stroke log append and undo.
    const auto before = json::parse(f.client().Get("/api/projects/p/strokes")->body)["strokes"].size();
    r = f.post("/api/projects/p/strokes", {{"class", "background"}, {"path", {{2, 2}, {8, 2}}}, {"radius", 1}});
    CHECK(json::parse(r->body)["count"] == before + 1);
    r = f.client().Delete("/api/projects/p/strokes/last");
    REQUIRE(r->status == 200);
    CHECK(json::parse(r->body)["removed"]["class"] == 0);
    CHECK(json::parse(r->body)["count"] == before);

    auto job = f.run_job("/api/projects/p/train");
    REQUIRE(job["state"] == "done");
    CHECK(job["kind"] == "train");
    CHECK(job["progress"] == 1.0);
    CHECK(job["result"]["row_length"] == 138);
    REQUIRE(f.run_job("/api/projects/p/predict")["state"] == "done");
    r = f.client().Get("/api/projects/p/slice?overlay=probability");
    CHECK(r->status == 200);
    CHECK(is_png(r->body));
    CHECK(f.client().Get("/api/projects/p/slice?overlay=segmentation")->status == 422);

    job = f.run_job("/api/projects/p/segment");
    REQUIRE(job["state"] == "done");
    const auto objects = job["result"]["objects"].get<int>();
    CHECK(objects > 0);
    CHECK(f.client().Get("/api/projects/p/slice?overlay=segmentation")->status == 200);

    // Exports.
    r = f.client().Get("/api/projects/p/segmentation");
    REQUIRE(r->status == 200);
    CHECK(is_png(r->body));
    TempDir tmp;
    write_file_atomic(tmp / "seg.png", r->body);
    CHECK(read_colorized_labels(tmp / "seg.png").max_label() == static_cast<std::uint32_t>(objects));
    r = f.client().Get("/api/projects/p/segmentation?format=mask");
    REQUIRE(r->status == 200);
    write_file_atomic(tmp / "mask.png", r->body);
    CHECK(read_mask(tmp / "mask.png").labels.size() == 96u * 96u);
    CHECK(f.client().Get("/api/projects/p/segmentation?format=jpeg")->status == 400);
    r = f.client().Get("/api/projects/p/probability");
    CHECK(r->status == 200);

    // Params update with re-segmentation.
    r = f.client().Get("/api/projects/p/segmentation/params");
    CHECK(json::parse(r->body)["threshold"] == 0.5);
    r = f.put("/api/projects/p/segmentation/params", {{"threshold", 0.99}});
    REQUIRE(r->status == 202);
    const auto resegment = f.wait_job(json::parse(r->body)["job"]["id"]);
    CHECK(resegment["state"] == "done");
    CHECK(resegment["result"]["params"]["threshold"] == 0.99);
    CHECK(resegment["result"]["objects"].get<int>() <= objects);
    CHECK(json::parse(f.client().Get("/api/projects/p/segmentation/params")->body)["threshold"] == 0.99);
    CHECK(f.put("/api/projects/p/segmentation/params", {{"threshold", 3}})->status == 422);
    CHECK(f.put("/api/projects/p/segmentation/params", {{"treshold", 0.3}})->status == 400);

    // Segment with explicit params, then the stored params.
    job = f.run_job("/api/projects/p/segment", {{"params", {{"threshold", 0.5}}}});
    CHECK(job["result"]["objects"] == objects);

    // Jobs listing by owner.
    r = f.client().Get("/api/jobs?owner=p");
    CHECK(json::parse(r->body)["jobs"].size() == 6);

    // Model export and import into a second project.
    r = f.client().Get("/api/projects/p/model");
    REQUIRE(r->status == 200);
    const std::string model_bytes = r->body;
    annotated_project(f, "q", *corpus, 1);
    r = f.client().Put("/api/projects/q/model", model_bytes, "application/octet-stream");
    CHECK(r->status == 200);
    CHECK(f.client().Get("/api/projects/q/model")->body == model_bytes);
    CHECK(f.client().Put("/api/projects/q/model", "garbage", "application/octet-stream")->status == 400);
    REQUIRE(f.run_job("/api/projects/q/predict")["state"] == "done");

    // Layout mismatch on import.
    REQUIRE(f.post("/api/projects", {{"id", "lh"}, {"image", corpus->path(1).string()}})->status == 201);
    REQUIRE(f.run_job("/api/projects/lh/preprocess", {{"params", {{"features", "lh"}}}})["state"] == "done");
    r = f.client().Put("/api/projects/lh/model", model_bytes, "application/octet-stream");
    CHECK(r->status == 422);
}

TEST_CASE("concurrent mutations on one project conflict") {
    ServiceFixture f(quick_config());
    const auto corpus = make_corpus(tiny_spec({512, 512, 1}));
    annotated_project(f, "p", *corpus, 0);
    REQUIRE(f.run_job("/api/projects/p/train")["state"] == "done");
    REQUIRE(f.run_job("/api/projects/p/predict")["state"] == "done");

    const json heavy{{"params", {{"smooth_radius", 3}, {"watershed", true}}}};
    auto first = f.post("/api/projects/p/segment", heavy);
    auto second = f.post("/api/projects/p/segment", heavy);
    REQUIRE(first->status == 202);
    CHECK(second->status == 409);
    CHECK(json::parse(f.client().Get("/api/projects/p")->body)["busy"] == true);
    CHECK(f.wait_job(json::parse(first->body)["id"])["state"] == "done");

    // Reads stay available while a preprocess job runs.
    first = f.post("/api/projects/p/preprocess", {{"params", {{"target_size", 16}}}});
    REQUIRE(first->status == 202);
    CHECK(f.post("/api/projects/p/segment")->status == 409);
    CHECK(f.post("/api/projects/p/preprocess")->status == 409);
    CHECK(f.client().Get("/api/projects/p/slice")->status == 200);
    CHECK(f.client().Get("/api/projects/p/strokes")->status == 200);
    CHECK(f.wait_job(json::parse(first->body)["id"])["state"] == "done");
    CHECK(f.post("/api/projects/p/segment")->status == 422);
}

TEST_CASE("dataset clustering and reuse over HTTP") {
    auto config = quick_config();
    config.k_i = 2;
    config.cluster_seed = 4;
    ServiceFixture f(config);
    const auto corpus = make_corpus(tiny_spec());
    json images = json::array();
    for (std::size_t i = 0; i < corpus->images.size(); ++i) images.push_back(corpus->path(i).string());

    CHECK(f.post("/api/datasets", {{"id", "d"}})->status == 400);
    REQUIRE(f.post("/api/datasets", {{"id", "d"}, {"images", images}})->status == 201);
    CHECK(f.post("/api/datasets", {{"id", "d"}, {"images", images}})->status == 409);
    CHECK(f.client().Get("/api/datasets/zzz")->status == 404);
    CHECK(json::parse(f.client().Get("/api/datasets")->body)["datasets"].size() == 1);

    auto r = f.client().Get("/api/datasets/d/manifest");
    CHECK(r->status == 422);
    CHECK(error_of(r) == "cluster required");
    CHECK(f.post("/api/datasets/d/reuse")->status == 422);

    r = f.client().Get("/api/datasets/d/elbow?k_max=4");
    REQUIRE(r->status == 200);
    CHECK(json::parse(r->body)["points"].size() == 4);
    CHECK(f.client().Get("/api/datasets/d/elbow?k_max=9")->status == 422);

    const auto job = f.run_job("/api/datasets/d/cluster");
    REQUIRE(job["state"] == "done");
    CHECK(job["kind"] == "cluster");
    r = f.client().Get("/api/datasets/d/manifest");
    REQUIRE(r->status == 200);
    const auto manifest = parse_manifest(r->body);
    CHECK(manifest.images.size() == 4);
    const auto ds = json::parse(f.client().Get("/api/datasets/d")->body);
    REQUIRE(ds["prototype_projects"].size() == 2);

    r = f.post("/api/datasets/d/reuse", {{"mode", "intra"}});
    CHECK(r->status == 422);
    CHECK(error_of(r).find("missing model for prototype") != std::string::npos);
    CHECK(f.post("/api/datasets/d/reuse", {{"mode", "sideways"}})->status == 422);

    // Annotate and train each prototype through its project.
    for (const auto& [cluster, pid] : ds["prototype_projects"].items()) {
        const auto* proto = manifest.prototype(std::stoi(cluster));
        REQUIRE(proto);
        std::size_t index = 0;
        while (corpus->images[index].id != proto->id) ++index;
        const std::string id = pid.get<std::string>();
        REQUIRE(f.run_job("/api/projects/" + id + "/preprocess")["state"] == "done");
        const auto strokes = simulate_initial_strokes(corpus->images[index].truth, AnnotatorParams{}, 3);
        f.client().Put("/api/projects/" + id + "/strokes", format_strokes(strokes), "application/json");
        REQUIRE(f.run_job("/api/projects/" + id + "/train")["state"] == "done");
    }

    CHECK(f.client().Get("/api/datasets/d/reuse/intra")->status == 422);
    auto reuse = f.run_job("/api/datasets/d/reuse", {{"mode", "intra"}});
    REQUIRE(reuse["state"] == "done");
    CHECK(reuse["kind"] == "reuse");
    REQUIRE(reuse["result"]["results"].size() == 2);
    for (const auto& item : reuse["result"]["results"]) CHECK(item["cluster"] == item["model_cluster"]);
    const auto file = reuse["result"]["results"][0]["labels"].get<std::string>();
    r = f.client().Get("/api/datasets/d/reuse/intra/" + file);
    CHECK(r->status == 200);
    CHECK(is_png(r->body));
    CHECK(f.client().Get("/api/datasets/d/reuse/intra/none.png")->status == 404);
    CHECK(f.client().Get("/api/datasets/d/reuse/intra")->status == 200);

    auto eval = f.run_job("/api/datasets/d/reuse", {{"mode", "inter"}, {"gold_dir", corpus->dir.path().string()}});
    REQUIRE(eval["state"] == "done");
    CHECK(eval["kind"] == "evaluate");
    CHECK(eval["result"]["results"].size() == 4);
    CHECK(eval["result"]["summary"]["methods"][0]["method"] == "inter-cluster");
    CHECK(eval["result"]["summary"]["methods"][0]["runs"] == 4);

    // A failing job reports its diagnostic.
    eval = f.run_job("/api/datasets/d/reuse", {{"mode", "intra"}, {"gold_dir", "/nonexistent"}});
    CHECK(eval["state"] == "failed");
    CHECK(eval["message"].get<std::string>().find("gold standard") != std::string::npos);
}
