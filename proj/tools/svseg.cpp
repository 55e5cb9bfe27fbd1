// svseg command-line front end. Every pipeline subcommand goes through the
// same step functions as the HTTP service.

#include "svseg/workbench/experiment.hpp"
#include "svseg/workbench/service.hpp"
#include "svseg/workbench/steps.hpp"

#include "CLI11.hpp"

#include <csignal>
#include <iostream>

using namespace svseg;

namespace {

struct Globals {
    std::string root;
    std::string config_file;
    std::map<std::string, std::string> overrides;  // config keys set by flags

    std::filesystem::path project_root() const {
        return root.empty() ? default_project_root() : std::filesystem::path(root);
    }
    WorkbenchConfig config() const {
        auto c = config_file.empty() ? load_default_config(project_root()) : WorkbenchConfig::load(config_file);
        for (const auto& [k, v] : overrides) c.set(k, v);
        return c;
    }
};

/// Registers a flag whose value is forwarded to WorkbenchConfig::set(key).
CLI::Option* config_option(CLI::App* app, Globals& g, const std::string& flag, const std::string& key,
                           const std::string& help) {
    return app->add_option_function<std::string>(flag, [&g, key](const std::string& v) { g.overrides[key] = v; }, help);
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << "\n"; }

LabelImage read_labels(const std::filesystem::path& path, bool mask) {
    if (!mask) return read_colorized_labels(path);
    return label_components(foreground_of(read_mask(path)));
}

std::pair<std::string, std::string> split_model_pair(const std::string& s) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == s.size()) {
        throw PreconditionError("expected PROTOTYPE=MODEL_FILE, got '" + s + "'");
    }
    return {s.substr(0, eq), s.substr(eq + 1)};
}

WorkbenchService* g_service = nullptr;

extern "C" void handle_signal(int) {
    if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Guided interactive segmentation with supervoxel classifiers"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--root", g.root, "Project root directory (default: $SVSEG_PROJECT_ROOT or ./svseg-projects)");
    app.add_option("--config", g.config_file, "key = value defaults file")->check(CLI::ExistingFile);

    // preprocess ------------------------------------------------------------
    auto* pre = app.add_subcommand("preprocess", "Image -> supervoxel and feature caches");
    std::string project_id, image_path, layout = "single_image";
    pre->add_option("--project", project_id, "Project id")->required();
    pre->add_option("--image", image_path, "Image to attach when creating the project");
    pre->add_option("--layout", layout, "single_image or slice_stack")->check(CLI::IsMember({"single_image", "slice_stack"}));
    config_option(pre, g, "--size", "target_size", "Supervoxel target size in voxels");
    config_option(pre, g, "--iterations", "slic_iterations", "SLIC iterations");
    config_option(pre, g, "--features", "features", "Feature categories: all or a comma list of lh, nh, grad, log, tex");
    config_option(pre, g, "--seed", "slic_seed", "Seed");

    // train -----------------------------------------------------------------
    auto* train = app.add_subcommand("train", "Project + strokes -> model");
    std::string strokes_file;
    train->add_option("--project", project_id, "Project id")->required();
    train->add_option("--strokes", strokes_file, "Stroke file replacing the project's stroke log")
        ->check(CLI::ExistingFile);
    config_option(train, g, "--classifier", "classifier", "rf or svm");
    train->add_flag_callback("--optimize", [&g] { g.overrides["optimize"] = "true"; }, "Random hyperparameter search");
    config_option(train, g, "--calibrate", "calibration", "none, platt or isotonic");
    config_option(train, g, "--trees", "n_trees", "Number of trees (rf)");
    config_option(train, g, "--search-iterations", "search_iterations", "Random search iterations");
    config_option(train, g, "--seed", "train_seed", "Seed");

    // predict ---------------------------------------------------------------
    auto* predict = app.add_subcommand("predict", "Model + project -> probability map");
    std::string model_file;
    predict->add_option("--project", project_id, "Project id")->required();
    predict->add_option("--model", model_file, "Model file to import before predicting")->check(CLI::ExistingFile);

    // segment ---------------------------------------------------------------
    auto* segment = app.add_subcommand("segment", "Probability map -> label image");
    nlohmann::json seg_overrides = nlohmann::json::object();
    std::string seg_out;
    bool seg_mask = false;
    segment->add_option("--project", project_id, "Project id")->required();
    segment->add_option_function<double>("--threshold", [&](double v) { seg_overrides["threshold"] = v; },
                                         "Foreground probability threshold (default 0.5)");
    segment->add_option_function<std::size_t>("--min-object-size", [&](std::size_t v) { seg_overrides["min_object_size"] = v; },
                                              "Remove objects smaller than this many voxels");
    segment->add_option_function<std::size_t>("--max-hole-size", [&](std::size_t v) { seg_overrides["max_hole_size"] = v; },
                                              "Fill holes up to this many voxels");
    segment->add_option_function<int>("--smooth-radius", [&](int v) { seg_overrides["smooth_radius"] = v; },
                                      "Morphological smoothing radius");
    segment->add_option_function<bool>("--watershed", [&](bool v) { seg_overrides["watershed"] = v; },
                                       "Split touching objects (true/false)");
    segment->add_option_function<double>("--watershed-h", [&](double v) { seg_overrides["watershed_h"] = v; },
                                         "h-maxima depth");
    segment->add_option("--out", seg_out, "Also export the label image here");
    segment->add_flag("--mask", seg_mask, "Export a binary mask instead of colorized labels");

    // cluster ---------------------------------------------------------------
    auto* cluster = app.add_subcommand("cluster", "Images -> clustering manifest");
    std::vector<std::string> images;
    std::string manifest_out, dataset_id;
    int elbow_max = 0;
    cluster->add_option("images", images, "Images")->required()->check(CLI::ExistingPath);
    cluster->add_option("--out", manifest_out, "Manifest output path");
    cluster->add_option("--dataset", dataset_id, "Register as a dataset with prototype projects");
    config_option(cluster, g, "--kc", "k_c", "Dominant colors per image");
    config_option(cluster, g, "--ki", "k_i", "Number of image clusters");
    config_option(cluster, g, "--color-sort", "color_sort", "per_channel or lexicographic");
    config_option(cluster, g, "--seed", "cluster_seed", "Seed");
    cluster->add_option("--elbow", elbow_max, "Print the elbow scan for k = 1..N instead of clustering");

    // reuse -----------------------------------------------------------------
    auto* reuse = app.add_subcommand("reuse", "Manifest + prototype models -> segmentations");
    std::string manifest_in, mode = "intra", reuse_out, gold_dir;
    std::vector<std::string> model_pairs;
    reuse->add_option("--manifest", manifest_in, "Manifest file")->check(CLI::ExistingFile);
    reuse->add_option("--dataset", dataset_id, "Dataset id (manifest and models from its prototype projects)");
    reuse->add_option("--model", model_pairs, "PROTOTYPE_ID=MODEL_FILE, one per prototype");
    reuse->add_option("--mode", mode, "intra or inter")->check(CLI::IsMember({"intra", "inter"}));
    reuse->add_option("--out", reuse_out, "Output directory")->required();
    reuse->add_option("--gold-dir", gold_dir, "Directory of <image>_gold.csv files; adds an evaluation summary");
    config_option(reuse, g, "--size", "target_size", "Supervoxel target size");
    config_option(reuse, g, "--threshold", "threshold", "Foreground probability threshold");

    // evaluate --------------------------------------------------------------
    auto* evaluate = app.add_subcommand("evaluate", "Labels + gold points -> detection report");
    std::string labels_file, gold_file;
    bool labels_mask = false;
    evaluate->add_option("--labels", labels_file, "Label image (colorized labels)")->required()->check(CLI::ExistingFile);
    evaluate->add_option("--gold", gold_file, "Gold point CSV")->required()->check(CLI::ExistingFile);
    evaluate->add_flag("--mask", labels_mask, "Labels file is a binary mask; objects are its components");

    // synth -----------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "Write a synthetic corpus with gold points");
    SynthSpec spec;
    std::string synth_out;
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--batches", spec.batches, "Color batches");
    synth->add_option("--per-batch", spec.images_per_batch, "Images per batch");
    synth->add_option("--width", spec.dims.x, "Width");
    synth->add_option("--height", spec.dims.y, "Height");
    synth->add_option("--depth", spec.dims.z, "Depth (1 for 2D)");
    synth->add_option("--min-nuclei", spec.min_nuclei, "Fewest nuclei per image");
    synth->add_option("--max-nuclei", spec.max_nuclei, "Most nuclei per image");
    synth->add_option("--min-lesions", spec.min_lesions, "Fewest lesion decoys per image");
    synth->add_option("--max-lesions", spec.max_lesions, "Most lesion decoys per image");
    synth->add_option("--shift", spec.shift_magnitude, "Batch color shift magnitude");
    synth->add_option("--noise", spec.noise, "Per-channel noise sigma");
    synth->add_option("--seed", spec.seed, "Seed");

    // experiment ------------------------------------------------------------
    auto* experiment = app.add_subcommand("experiment", "Dedicated vs intra- vs inter-cluster reuse on a synthetic corpus");
    ExperimentParams ep;
    std::string exp_out;
    experiment->add_option("--batches", ep.corpus.batches, "Color batches");
    experiment->add_option("--per-batch", ep.corpus.images_per_batch, "Images per batch");
    experiment->add_option("--ki", ep.k_i, "Image clusters");
    experiment->add_option("--seed", ep.seed, "Seed");
    experiment->add_option("--out", exp_out, "Write the JSON summary here");

    // serve -----------------------------------------------------------------
    auto* serve = app.add_subcommand("serve", "Start the HTTP service");
    std::string host = "127.0.0.1";
    int port = 8080;
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--port", port, "Port (0 picks a free one)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        const auto config = g.config();
        const auto root = g.project_root();

        if (*pre) {
            ProjectStore store(root);
            std::shared_ptr<Project> p;
            if (store.exists(project_id)) {
                p = store.get(project_id);
                if (!image_path.empty() && p->state().image != std::filesystem::absolute(image_path).string()) {
                    throw ConflictError("project '" + project_id + "' exists for a different image");
                }
            } else {
                if (image_path.empty()) throw PreconditionError("--image required to create project '" + project_id + "'");
                p = store.create(project_id, image_path, layout == "slice_stack" ? Layout::slice_stack : Layout::single_image);
            }
            print_json(preprocess_step(*p, config));
        } else if (*train) {
            ProjectStore store(root);
            auto p = store.get(project_id);
            if (!strokes_file.empty()) p->replace_strokes(parse_strokes(read_file_text(strokes_file)));
            p->require_trainable();
            print_json(train_step(*p, config));
        } else if (*predict) {
            ProjectStore store(root);
            auto p = store.get(project_id);
            if (!model_file.empty()) p->import_model(load_model(model_file));
            print_json(predict_step(*p));
        } else if (*segment) {
            ProjectStore store(root);
            auto p = store.get(project_id);
            const auto result = segment_step(*p, seg_overrides);
            if (!seg_out.empty()) {
                write_label_image(p->load_segmentation(), seg_out, seg_mask ? LabelWriteMode::mask : LabelWriteMode::colorized);
            }
            print_json(result);
        } else if (*cluster) {
            std::vector<std::filesystem::path> paths(images.begin(), images.end());
            if (elbow_max > 0) {
                const auto imgs = dataset_images(paths);
                const auto vectors = dataset_palettes(imgs, config.palette_params(), config.cluster_seed);
                if (static_cast<std::size_t>(elbow_max) > imgs.size()) {
                    throw PreconditionError("--elbow exceeds the number of images");
                }
                std::cout << "k,inertia\n";
                for (const auto& pt : elbow_scan(vectors, 1, elbow_max, config.cluster_seed))
                    std::cout << pt.k << "," << pt.inertia << "\n";
                return 0;
            }
            ClusterManifest manifest;
            if (!dataset_id.empty()) {
                DatasetStore datasets(root);
                ProjectStore projects(root);
                datasets.create(dataset_id, paths);
                const auto r = cluster_step(datasets, projects, dataset_id, config);
                manifest = datasets.manifest(dataset_id);
                std::cerr << "prototype projects: " << r["prototype_projects"].dump() << "\n";
            } else {
                manifest = cluster_dataset(dataset_images(paths), config.palette_params(), config.k_i, config.cluster_seed);
            }
            if (!manifest_out.empty()) save_manifest(manifest, manifest_out);
            else std::cout << format_manifest(manifest);
        } else if (*reuse) {
            ReuseRequest rr;
            rr.mode = parse_reuse_mode(mode);
            if (!gold_dir.empty()) rr.gold_dir = std::filesystem::path(gold_dir);
            ClusterManifest manifest;
            if (!dataset_id.empty()) {
                DatasetStore datasets(root);
                ProjectStore projects(root);
                manifest = datasets.manifest(dataset_id);
                if (model_pairs.empty()) rr.models = prototype_models(datasets, projects, dataset_id);
            } else if (!manifest_in.empty()) {
                manifest = load_manifest(manifest_in);
            } else {
                throw PreconditionError("--manifest or --dataset required");
            }
            for (const auto& pair : model_pairs) {
                const auto [id, file] = split_model_pair(pair);
                rr.models[id] = load_model(file);
            }
            const auto r = reuse_step(manifest, rr, config, reuse_out);
            if (r.contains("summary")) {
                std::cout << r["summary"].dump(2) << "\n";
            } else {
                std::cout << r["results"].size() << " segmentations written to " << reuse_out << "\n";
            }
        } else if (*evaluate) {
            const auto labels = read_labels(labels_file, labels_mask);
            print_json(report_to_json(match_objects(labels, load_gold_standard(gold_file))));
        } else if (*synth) {
            spec.validate();
            const auto corpus = generate_synth_corpus(spec);
            save_synth_corpus(corpus, spec, synth_out);
            std::cout << corpus.size() << " images written to " << synth_out << "\n";
        } else if (*experiment) {
            const auto report = run_reuse_experiment(ep);
            std::cout << format_summary_table(report.summary);
            std::cout << "cluster/batch disagreements: " << report.cluster_batch_disagreements << "\n";
            std::cout << "seconds: " << report.seconds_total << "\n";
            if (!exp_out.empty()) write_file_atomic(exp_out, summary_json(report.summary));
        } else if (*serve) {
            WorkbenchService service({root, config});
            const int bound = service.bind(host, port);
            g_service = &service;
            std::signal(SIGINT, handle_signal);
            std::signal(SIGTERM, handle_signal);
            std::cout << "listening on http://" << host << ":" << bound << " (root " << root.string() << ")"
                      << std::endl;
            service.run();
            g_service = nullptr;
        }
    } catch (const NotFoundError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const ConflictError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 5;
    } catch (const PreconditionError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const FormatError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
