#include "svseg/workbench/service.hpp"

#include "svseg/workbench/steps.hpp"

#include "httplib.h"

#include <atomic>
#include <cctype>

namespace svseg {

namespace {

using Request = httplib::Request;
using Response = httplib::Response;
using Handler = std::function<void(const Request&, Response&)>;

class BadRequest : public Error {
public:
    using Error::Error;
};

void send_json(Response& res, const nlohmann::json& j, int status = 200) {
    res.status = status;
    res.set_content(j.dump(2) + "\n", "application/json");
}

void send_error(Response& res, int status, const std::string& message) {
    send_json(res, {{"error", message}, {"status", status}}, status);
}

Handler guarded(Handler h) {
    return [h = std::move(h)](const Request& req, Response& res) {
        try {
            h(req, res);
        } catch (const NotFoundError& e) {
            send_error(res, 404, e.what());
        } catch (const ConflictError& e) {
            send_error(res, 409, e.what());
        } catch (const PreconditionError& e) {
            send_error(res, 422, e.what());
        } catch (const FormatError& e) {
            send_error(res, 400, e.what());
        } catch (const BadRequest& e) {
            send_error(res, 400, e.what());
        } catch (const nlohmann::json::exception& e) {
            send_error(res, 400, std::string("malformed JSON: ") + e.what());
        } catch (const std::exception& e) {
            send_error(res, 500, e.what());
        }
    };
}

nlohmann::json body_json(const Request& req) {
    if (req.body.empty()) return nlohmann::json::object();
    auto j = nlohmann::json::parse(req.body);
    if (!j.is_object()) throw BadRequest("request body must be a JSON object");
    return j;
}

std::string param(const Request& req, const char* key, const std::string& fallback) {
    return req.has_param(key) ? req.get_param_value(key) : fallback;
}

int int_param(const Request& req, const char* key, int fallback) {
    if (!req.has_param(key)) return fallback;
    const auto v = req.get_param_value(key);
    try {
        std::size_t used = 0;
        const int x = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw BadRequest(std::string("query parameter '") + key + "' must be an integer");
    }
}

double double_param(const Request& req, const char* key, double fallback) {
    if (!req.has_param(key)) return fallback;
    const auto v = req.get_param_value(key);
    try {
        std::size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw BadRequest(std::string("query parameter '") + key + "' must be a number");
    }
}

Layout parse_layout(const std::string& s) {
    if (s == "single_image") return Layout::single_image;
    if (s == "slice_stack") return Layout::slice_stack;
    throw BadRequest("layout must be single_image or slice_stack");
}

std::string sanitize_id(const std::string& s) {
    std::string id;
    for (char c : s) id += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    if (id.empty()) id = "project";
    if (id.size() > 56) id.resize(56);
    return id;
}

void send_file(Response& res, const std::filesystem::path& path, const char* content_type) {
    const auto bytes = read_file_bytes(path);
    res.status = 200;
    res.set_content(reinterpret_cast<const char*>(bytes.data()), bytes.size(), content_type);
}

const char* label_content_type(const Dims& d) { return d.z > 1 ? "image/tiff" : "image/png"; }

}  // namespace

struct WorkbenchService::Impl {
    ServiceOptions options;
    ProjectStore projects;
    DatasetStore datasets;
    httplib::Server server;
    std::atomic<std::uint64_t> scratch_counter{0};
    JobManager jobs;  // last: destroyed first, joining workers that use the stores

    explicit Impl(ServiceOptions o)
        : options(std::move(o)), projects(options.root), datasets(options.root) {
        routes();
    }

    static std::string dataset_owner(const std::string& id) { return "dataset:" + id; }

    WorkbenchConfig config_from(const nlohmann::json& body) const {
        return config_with_overrides(options.config, body.contains("params") ? body["params"] : nlohmann::json());
    }

    void require_idle(const std::string& owner) const {
        if (jobs.busy(owner)) throw ConflictError("a job is already running on '" + owner + "'");
    }

    nlohmann::json project_json(const std::shared_ptr<Project>& p) const {
        auto j = p->state().to_json();
        j["busy"] = jobs.busy(p->id());
        return j;
    }

    void accepted(Response& res, const std::string& job_id) { send_json(res, jobs.status(job_id).to_json(), 202); }

    std::filesystem::path scratch_file(const std::string& ext) {
        const auto dir = options.root / "tmp";
        std::filesystem::create_directories(dir);
        return dir / ("export-" + std::to_string(scratch_counter++) + ext);
    }

    void routes() {
        auto& s = server;

        s.Get("/api/health", guarded([](const Request&, Response& res) { send_json(res, {{"status", "ok"}}); }));

        s.Get("/api/config", guarded([this](const Request&, Response& res) {
                  send_json(res, {{"config", options.config.format()}});
              }));

        // ---- projects ----------------------------------------------------
        s.Get("/api/projects", guarded([this](const Request&, Response& res) {
                  nlohmann::json list = nlohmann::json::array();
                  for (const auto& id : projects.list()) list.push_back(project_json(projects.get(id)));
                  send_json(res, {{"projects", list}});
              }));

        s.Post("/api/projects", guarded([this](const Request& req, Response& res) {
                   const auto body = body_json(req);
                   if (!body.contains("image") || !body["image"].is_string()) {
                       throw BadRequest("'image' (path) is required");
                   }
                   const std::filesystem::path image = body["image"].get<std::string>();
                   if (!std::filesystem::exists(image)) throw PreconditionError("image " + image.string() + " does not exist");
                   const auto layout = parse_layout(body.value("layout", std::string("single_image")));
                   std::string id;
                   if (body.contains("id")) {
                       id = body["id"].get<std::string>();
                   } else {
                       const auto stem = sanitize_id(image.stem().string());
                       id = stem;
                       for (int k = 2; projects.exists(id); ++k) id = stem + "-" + std::to_string(k);
                   }
                   send_json(res, project_json(projects.create(id, image, layout)), 201);
               }));

        s.Get(R"(/api/projects/([^/]+))", guarded([this](const Request& req, Response& res) {
                  send_json(res, project_json(projects.get(req.matches[1])));
              }));

        s.Get(R"(/api/projects/([^/]+)/slice)", guarded([this](const Request& req, Response& res) {
                  auto p = projects.get(req.matches[1]);
                  const auto axis = parse_axis(param(req, "axis", "z"));
                  const auto overlay = param(req, "overlay", "none");
                  const double blend = double_param(req, "blend", overlay == "none" ? 0.0 : 0.5);
                  if (blend < 0.0 || blend > 1.0) throw PreconditionError("blend must lie in [0, 1]");
                  const auto vol = p->load_image();
                  const int index = int_param(req, "index", 0);
                  RgbImage img;
                  if (overlay == "none") {
                      img = extract_slice(vol, axis, index);
                  } else if (overlay == "boundaries") {
                      const auto mask = boundary_mask(p->load_supervoxels());
                      LabelImage li(mask.dims);
                      for (std::size_t i = 0; i < mask.values.size(); ++i) li.labels[i] = mask.values[i];
                      img = extract_slice(vol, axis, index, &li, blend);
                  } else if (overlay == "probability") {
                      p->require_probability();
                      const auto seg = p->load_supervoxels();
                      const auto prob = p->load_probability();
                      ScalarField f{seg.dims(), std::vector<float>(seg.dims().count())};
                      for (std::size_t i = 0; i < f.values.size(); ++i)
                          f.values[i] = static_cast<float>(prob.p[seg.label_at(i)]);
                      img = extract_slice(vol, axis, index, &f, blend);
                  } else if (overlay == "segmentation") {
                      const auto labels = p->load_segmentation();
                      img = extract_slice(vol, axis, index, &labels, blend);
                  } else {
                      throw BadRequest("overlay must be none, boundaries, probability or segmentation");
                  }
                  const auto png = encode_png(img);
                  res.set_content(reinterpret_cast<const char*>(png.data()), png.size(), "image/png");
              }));

        // ---- strokes -----------------------------------------------------
        s.Get(R"(/api/projects/([^/]+)/strokes)", guarded([this](const Request& req, Response& res) {
                  const auto list = projects.get(req.matches[1])->strokes();
                  send_json(res, nlohmann::json::parse(format_strokes(list)));
              }));

        s.Post(R"(/api/projects/([^/]+)/strokes)", guarded([this](const Request& req, Response& res) {
                   auto p = projects.get(req.matches[1]);
                   const auto stroke = stroke_from_json(body_json(req));
                   send_json(res, {{"count", p->add_stroke(stroke)}}, 201);
               }));

        s.Put(R"(/api/projects/([^/]+)/strokes)", guarded([this](const Request& req, Response& res) {
                  auto p = projects.get(req.matches[1]);
                  const auto list = parse_strokes(req.body);
                  p->replace_strokes(list);
                  send_json(res, {{"count", list.size()}});
              }));

        s.Delete(R"(/api/projects/([^/]+)/strokes/last)", guarded([this](const Request& req, Response& res) {
                     auto p = projects.get(req.matches[1]);
                     const auto removed = p->undo_stroke();
                     send_json(res, {{"removed", stroke_to_json(removed)}, {"count", p->state().stroke_count}});
                 }));

        // ---- pipeline jobs -----------------------------------------------
        s.Post(R"(/api/projects/([^/]+)/preprocess)", guarded([this](const Request& req, Response& res) {
                   auto p = projects.get(req.matches[1]);
                   const auto config = config_from(body_json(req));
                   config.slic_params();
                   config.feature_config().validate();
                   require_idle(p->id());
                   accepted(res, jobs.submit(JobKind::preprocess, p->id(), [p, config](const ProgressFn& progress) {
                                return preprocess_step(*p, config, progress);
                            }));
               }));

        s.Post(R"(/api/projects/([^/]+)/train)", guarded([this](const Request& req, Response& res) {
                   auto p = projects.get(req.matches[1]);
                   const auto config = config_from(body_json(req));
                   config.classifier_spec();
                   require_idle(p->id());
                   p->require_trainable();
                   accepted(res, jobs.submit(JobKind::train, p->id(), [p, config](const ProgressFn& progress) {
                                return train_step(*p, config, progress);
                            }));
               }));

        s.Post(R"(/api/projects/([^/]+)/predict)", guarded([this](const Request& req, Response& res) {
                   auto p = projects.get(req.matches[1]);
                   require_idle(p->id());
                   p->require_model();
                   accepted(res, jobs.submit(JobKind::predict, p->id(), [p](const ProgressFn& progress) {
                                return predict_step(*p, progress);
                            }));
               }));

        s.Post(R"(/api/projects/([^/]+)/segment)", guarded([this](const Request& req, Response& res) {
                   auto p = projects.get(req.matches[1]);
                   const auto body = body_json(req);
                   const auto overrides = body.contains("params") ? body["params"] : nlohmann::json::object();
                   segmentation_params_from_json(overrides, p->state().segmentation_params).validate();
                   require_idle(p->id());
                   p->require_probability();
                   accepted(res, jobs.submit(JobKind::segment, p->id(), [p, overrides](const ProgressFn& progress) {
                                return segment_step(*p, overrides, progress);
                            }));
               }));

        // ---- segmentation ------------------------------------------------
        s.Get(R"(/api/projects/([^/]+)/segmentation/params)", guarded([this](const Request& req, Response& res) {
                  send_json(res, segmentation_params_to_json(projects.get(req.matches[1])->state().segmentation_params));
              }));

        s.Put(R"(/api/projects/([^/]+)/segmentation/params)", guarded([this](const Request& req, Response& res) {
                  auto p = projects.get(req.matches[1]);
                  const auto overrides = body_json(req);
                  const auto params = segmentation_params_from_json(overrides, p->state().segmentation_params);
                  params.validate();
                  require_idle(p->id());
                  if (!p->state().probability) {
                      p->set_segmentation_params(params);
                      send_json(res, {{"params", segmentation_params_to_json(params)}, {"job", nullptr}});
                      return;
                  }
                  const auto job = jobs.submit(JobKind::segment, p->id(), [p, overrides](const ProgressFn& progress) {
                      return segment_step(*p, overrides, progress);
                  });
                  send_json(res, {{"params", segmentation_params_to_json(params)}, {"job", jobs.status(job).to_json()}},
                            202);
              }));

        s.Get(R"(/api/projects/([^/]+)/segmentation)", guarded([this](const Request& req, Response& res) {
                  auto p = projects.get(req.matches[1]);
                  const auto format = param(req, "format", "colorized");
                  const auto st = p->state();
                  const auto stored = p->artifact_path(st.segmentation, "segment");
                  if (format == "colorized") {
                      send_file(res, stored, label_content_type(st.dims));
                  } else if (format == "mask") {
                      const auto labels = p->load_segmentation();
                      const auto tmp = scratch_file(labels.dims.z > 1 ? ".tif" : ".png");
                      write_label_image(labels, tmp, LabelWriteMode::mask);
                      send_file(res, tmp, label_content_type(labels.dims));
                      std::filesystem::remove(tmp);
                  } else {
                      throw BadRequest("format must be colorized or mask");
                  }
              }));

        s.Get(R"(/api/projects/([^/]+)/probability)", guarded([this](const Request& req, Response& res) {
                  auto p = projects.get(req.matches[1]);
                  send_file(res, p->artifact_path(p->state().probability, "predict"), "application/octet-stream");
              }));

        // ---- model artifacts ---------------------------------------------
        s.Get(R"(/api/projects/([^/]+)/model)", guarded([this](const Request& req, Response& res) {
                  auto p = projects.get(req.matches[1]);
                  send_file(res, p->artifact_path(p->state().model, "train"), "application/octet-stream");
              }));

        s.Put(R"(/api/projects/([^/]+)/model)", guarded([this](const Request& req, Response& res) {
                  auto p = projects.get(req.matches[1]);
                  const std::span<const std::uint8_t> bytes(reinterpret_cast<const std::uint8_t*>(req.body.data()),
                                                            req.body.size());
                  const auto model = deserialize_model(bytes);
                  require_idle(p->id());
                  p->import_model(model);
                  send_json(res, project_json(p));
              }));

        // ---- jobs ----------------------------------------------------------
        s.Get("/api/jobs", guarded([this](const Request& req, Response& res) {
                  const auto owner = param(req, "owner", "");
                  nlohmann::json list = nlohmann::json::array();
                  for (const auto& j : jobs.list())
                      if (owner.empty() || j.owner == owner) list.push_back(j.to_json());
                  send_json(res, {{"jobs", list}});
              }));

        s.Get(R"(/api/jobs/([^/]+))", guarded([this](const Request& req, Response& res) {
                  send_json(res, jobs.status(req.matches[1]).to_json());
              }));

        // ---- datasets ------------------------------------------------------
        s.Get("/api/datasets", guarded([this](const Request&, Response& res) {
                  nlohmann::json list = nlohmann::json::array();
                  for (const auto& id : datasets.list()) list.push_back(datasets.get(id).to_json());
                  send_json(res, {{"datasets", list}});
              }));

        s.Post("/api/datasets", guarded([this](const Request& req, Response& res) {
                   const auto body = body_json(req);
                   if (!body.contains("id") || !body.contains("images") || !body["images"].is_array()) {
                       throw BadRequest("'id' and 'images' (array of paths) are required");
                   }
                   std::vector<std::filesystem::path> images;
                   for (const auto& p : body["images"]) images.emplace_back(p.get<std::string>());
                   send_json(res, datasets.create(body["id"].get<std::string>(), images).to_json(), 201);
               }));

        s.Get(R"(/api/datasets/([^/]+))", guarded([this](const Request& req, Response& res) {
                  auto j = datasets.get(req.matches[1]).to_json();
                  j["busy"] = jobs.busy(dataset_owner(req.matches[1]));
                  send_json(res, j);
              }));

        s.Post(R"(/api/datasets/([^/]+)/cluster)", guarded([this](const Request& req, Response& res) {
                   const std::string id = req.matches[1];
                   datasets.get(id);
                   const auto config = config_from(body_json(req));
                   config.palette_params();
                   require_idle(dataset_owner(id));
                   accepted(res, jobs.submit(JobKind::cluster, dataset_owner(id), [this, id, config](const ProgressFn& pr) {
                                return cluster_step(datasets, projects, id, config, pr);
                            }));
               }));

        s.Get(R"(/api/datasets/([^/]+)/manifest)", guarded([this](const Request& req, Response& res) {
                  send_json(res, nlohmann::json::parse(format_manifest(datasets.manifest(req.matches[1]))));
              }));

        s.Get(R"(/api/datasets/([^/]+)/elbow)", guarded([this](const Request& req, Response& res) {
                  const std::string id = req.matches[1];
                  const auto n = static_cast<int>(datasets.get(id).images.size());
                  const int k_min = int_param(req, "k_min", 1);
                  const int k_max = int_param(req, "k_max", std::min(n, 10));
                  nlohmann::json points = nlohmann::json::array();
                  for (const auto& pt : elbow_step(datasets, id, options.config, k_min, k_max))
                      points.push_back({{"k", pt.k}, {"inertia", pt.inertia}});
                  send_json(res, {{"points", points}});
              }));

        s.Post(R"(/api/datasets/([^/]+)/reuse)", guarded([this](const Request& req, Response& res) {
                   const std::string id = req.matches[1];
                   const auto body = body_json(req);
                   const auto config = config_from(body);
                   ReuseRequest rr;
                   rr.mode = parse_reuse_mode(body.value("mode", std::string("intra")));
                   if (body.contains("segmentation")) rr.segmentation = body["segmentation"];
                   if (body.contains("gold_dir")) rr.gold_dir = std::filesystem::path(body["gold_dir"].get<std::string>());
                   require_idle(dataset_owner(id));
                   const auto manifest = datasets.manifest(id);
                   rr.models = prototype_models(datasets, projects, id);
                   const auto out = datasets.dir(id) / "reuse" / to_string(rr.mode);
                   const auto kind = rr.gold_dir ? JobKind::evaluate : JobKind::reuse;
                   accepted(res, jobs.submit(kind, dataset_owner(id), [manifest, rr, config, out](const ProgressFn& pr) {
                                auto result = reuse_step(manifest, rr, config, out);
                                pr(1.0);
                                return result;
                            }));
               }));

        s.Get(R"(/api/datasets/([^/]+)/reuse/(intra|inter))", guarded([this](const Request& req, Response& res) {
                  const auto path = datasets.dir(req.matches[1]) / "reuse" / std::string(req.matches[2]) / "results.json";
                  datasets.get(req.matches[1]);
                  if (!std::filesystem::exists(path)) throw PreconditionError("reuse required");
                  send_json(res, nlohmann::json::parse(read_file_text(path)));
              }));

        s.Get(R"(/api/datasets/([^/]+)/reuse/(intra|inter)/([A-Za-z0-9_.-]+))",
              guarded([this](const Request& req, Response& res) {
                  const auto path = datasets.dir(req.matches[1]) / "reuse" / std::string(req.matches[2]) /
                                    std::string(req.matches[3]);
                  datasets.get(req.matches[1]);
                  if (!std::filesystem::exists(path)) throw NotFoundError("unknown reuse output");
                  const auto ext = path.extension().string();
                  send_file(res, path, ext == ".png" ? "image/png" : ext == ".tif" ? "image/tiff" : "application/json");
              }));

        s.set_error_handler([](const Request&, Response& res) {
            if (res.body.empty()) send_error(res, res.status, res.status == 404 ? "no such endpoint" : "request failed");
        });
    }
};

WorkbenchService::WorkbenchService(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

WorkbenchService::~WorkbenchService() { stop(); }

int WorkbenchService::bind(const std::string& host, int port) {
    if (port == 0) {
        const int p = impl_->server.bind_to_any_port(host);
        if (p < 0) throw IoError("cannot bind " + host);
        return p;
    }
    if (!impl_->server.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void WorkbenchService::run() { impl_->server.listen_after_bind(); }

void WorkbenchService::stop() {
    if (impl_) impl_->server.stop();
}

ProjectStore& WorkbenchService::projects() { return impl_->projects; }
DatasetStore& WorkbenchService::datasets() { return impl_->datasets; }
JobManager& WorkbenchService::jobs() { return impl_->jobs; }
const WorkbenchConfig& WorkbenchService::config() const { return impl_->options.config; }

}  // namespace svseg
