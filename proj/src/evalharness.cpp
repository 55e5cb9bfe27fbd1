#include "svseg/evalharness.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace svseg {

// ---------------------------------------------------------------------------
// Gold standards
// ---------------------------------------------------------------------------

void GoldStandard::validate(const Dims& dims) const {
    std::set<std::tuple<int, int, int>> seen;
    for (const auto& p : points) {
        if (!in_bounds(dims, p)) {
            throw PreconditionError("gold point (" + std::to_string(p.x) + "," + std::to_string(p.y) + "," +
                                    std::to_string(p.z) + ") lies outside the " + to_string(dims) + " image");
        }
        if (!seen.emplace(p.x, p.y, p.z).second) {
            throw PreconditionError("duplicate gold point (" + std::to_string(p.x) + "," + std::to_string(p.y) + "," +
                                    std::to_string(p.z) + ")");
        }
    }
}

GoldStandard parse_gold_standard(const std::string& text, std::string image_id) {
    GoldStandard g;
    g.image_id = std::move(image_id);
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos || line[0] == '#') continue;
        std::vector<int> vals;
        bool ok = true;
        std::size_t pos = 0;
        while (pos <= line.size()) {
            const auto comma = line.find(',', pos);
            std::string field = line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
            const auto b = field.find_first_not_of(" \t"), e = field.find_last_not_of(" \t");
            field = b == std::string::npos ? "" : field.substr(b, e - b + 1);
            int v = 0;
            const auto res = std::from_chars(field.data(), field.data() + field.size(), v);
            if (field.empty() || res.ec != std::errc{} || res.ptr != field.data() + field.size()) ok = false;
            vals.push_back(v);
            if (comma == std::string::npos) break;
            pos = comma + 1;
        }
        if (!ok || (vals.size() != 2 && vals.size() != 3)) {
            if (g.points.empty() && lineno == 1) continue;  // header
            throw FormatError("gold standard line " + std::to_string(lineno) + ": expected x,y[,z]");
        }
        g.points.push_back({vals[0], vals[1], vals.size() == 3 ? vals[2] : 0});
    }
    return g;
}

std::string format_gold_standard(const GoldStandard& gold) {
    std::string out = "x,y,z\n";
    for (const auto& p : gold.points)
        out += std::to_string(p.x) + "," + std::to_string(p.y) + "," + std::to_string(p.z) + "\n";
    return out;
}

GoldStandard load_gold_standard(const std::filesystem::path& path) {
    return parse_gold_standard(read_file_text(path), path.stem().string());
}

void save_gold_standard(const GoldStandard& gold, const std::filesystem::path& path) {
    write_file_atomic(path, format_gold_standard(gold));
}

// ---------------------------------------------------------------------------
// Matching
// ---------------------------------------------------------------------------

double f1_from_counts(std::size_t tp, std::size_t fp, std::size_t fn) {
    const std::size_t den = 2 * tp + fp + fn;
    return den == 0 ? 0.0 : static_cast<double>(2 * tp) / static_cast<double>(den);
}

MatchReport make_report(std::size_t tp, std::size_t fp, std::size_t fn) {
    MatchReport r;
    r.tp = tp;
    r.fp = fp;
    r.fn = fn;
    r.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    r.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    r.f1 = f1_from_counts(tp, fp, fn);
    return r;
}

MatchReport match_objects(const LabelImage& labels, const GoldStandard& gold) {
    const Dims d = labels.dims;
    gold.validate(d);
    const std::uint32_t n = labels.max_label();
    std::vector<bool> present(n + 1, false), hit(n + 1, false);
    for (auto l : labels.labels) present[l] = true;
    std::size_t fn = 0;
    const int rz = d.z > 1 ? 1 : 0;
    for (const auto& p : gold.points) {
        const auto l = labels.labels[linear_index(d, p)];
        if (l) hit[l] = true;
        bool near = false;
        for (int dz = -rz; dz <= rz && !near; ++dz)
            for (int dy = -1; dy <= 1 && !near; ++dy)
                for (int dx = -1; dx <= 1 && !near; ++dx) {
                    const VoxelCoord q{p.x + dx, p.y + dy, p.z + dz};
                    near = in_bounds(d, q) && labels.labels[linear_index(d, q)] != 0;
                }
        if (!near) ++fn;
    }
    std::size_t tp = 0, fp = 0;
    for (std::uint32_t l = 1; l <= n; ++l) {
        if (!present[l]) continue;
        (hit[l] ? tp : fp)++;
    }
    return make_report(tp, fp, fn);
}

// ---------------------------------------------------------------------------
// Dataset summary
// ---------------------------------------------------------------------------

const MethodSummary* DatasetSummary::find(const std::string& method) const {
    for (const auto& m : methods)
        if (m.method == method) return &m;
    return nullptr;
}

double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw PreconditionError("quantile of an empty sample");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(values.size() - 1, lo + 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

DatasetSummary evaluate_dataset(const std::vector<RunRecord>& runs) {
    DatasetSummary s;
    s.runs = runs;
    std::vector<std::string> order;
    std::map<std::string, std::vector<double>> scores;
    for (const auto& r : runs) {
        if (!scores.count(r.method)) order.push_back(r.method);
        scores[r.method].push_back(r.report.f1);
    }
    for (const auto& m : order) {
        const auto& v = scores[m];
        MethodSummary ms;
        ms.method = m;
        ms.runs = v.size();
        ms.median_f1 = quantile(v, 0.5);
        ms.q1 = quantile(v, 0.25);
        ms.q3 = quantile(v, 0.75);
        ms.min_f1 = *std::min_element(v.begin(), v.end());
        ms.max_f1 = *std::max_element(v.begin(), v.end());
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double var = 0;
        for (double x : v) var += (x - mean) * (x - mean);
        ms.sigma_f1 = std::sqrt(var / static_cast<double>(v.size()));
        s.methods.push_back(ms);
    }
    return s;
}

std::string format_summary_table(const DatasetSummary& summary) {
    std::ostringstream out;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-22s %6s %10s %10s\n", "method", "runs", "median F1", "sigma F1");
    out << buf;
    for (const auto& m : summary.methods) {
        std::snprintf(buf, sizeof buf, "%-22s %6zu %10.4f %10.3f\n", m.method.c_str(), m.runs, m.median_f1, m.sigma_f1);
        out << buf;
    }
    return out.str();
}

std::string summary_json(const DatasetSummary& summary) {
    nlohmann::json j;
    auto& methods = j["methods"] = nlohmann::json::array();
    for (const auto& m : summary.methods) {
        methods.push_back({{"method", m.method},
                           {"runs", m.runs},
                           {"median_f1", m.median_f1},
                           {"sigma_f1", m.sigma_f1},
                           {"q1", m.q1},
                           {"q3", m.q3},
                           {"min_f1", m.min_f1},
                           {"max_f1", m.max_f1}});
    }
    // method -> cluster -> image -> scores
    std::map<std::string, std::map<int, std::map<std::string, std::vector<double>>>> grouped;
    for (const auto& r : summary.runs) grouped[r.method][r.cluster][r.image_id].push_back(r.report.f1);
    auto& per_image = j["per_image"] = nlohmann::json::object();
    for (const auto& [method, clusters] : grouped) {
        auto& mj = per_image[method] = nlohmann::json::array();
        for (const auto& [cluster, images] : clusters) {
            nlohmann::json cj{{"cluster", cluster}, {"images", nlohmann::json::array()}};
            for (const auto& [image, v] : images) {
                nlohmann::json ij{{"image", image}};
                if (v.size() == 1) {
                    ij["f1"] = v[0];
                } else {
                    ij["runs"] = v.size();
                    ij["q1"] = quantile(v, 0.25);
                    ij["median"] = quantile(v, 0.5);
                    ij["q3"] = quantile(v, 0.75);
                    ij["min"] = *std::min_element(v.begin(), v.end());
                    ij["max"] = *std::max_element(v.begin(), v.end());
                }
                cj["images"].push_back(ij);
            }
            mj.push_back(cj);
        }
    }
    auto& runs = j["runs"] = nlohmann::json::array();
    for (const auto& r : summary.runs) {
        runs.push_back({{"method", r.method},
                        {"image", r.image_id},
                        {"cluster", r.cluster},
                        {"model_source", r.model_source},
                        {"tp", r.report.tp},
                        {"fp", r.report.fp},
                        {"fn", r.report.fn},
                        {"precision", r.report.precision},
                        {"recall", r.report.recall},
                        {"f1", r.report.f1}});
    }
    return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Synthetic corpus
// ---------------------------------------------------------------------------

void SynthSpec::validate() const {
    if (!dims.valid()) throw PreconditionError("synthetic image dimensions must be positive");
    if (batches < 1 || images_per_batch < 1) throw PreconditionError("batch and image counts must be positive");
    if (min_nuclei < 1 || max_nuclei < min_nuclei) throw PreconditionError("nucleus count range must be positive");
    if (min_lesions < 0 || max_lesions < min_lesions) throw PreconditionError("lesion count range must be non-negative");
    if (!(min_radius >= 1.0) || max_radius < min_radius) throw PreconditionError("radius range must satisfy 1 <= min <= max");
    if (!(alt_tissue_fraction >= 0 && alt_tissue_fraction <= 1)) throw PreconditionError("alt_tissue_fraction must lie in [0, 1]");
    if (vessels < 0 || noise < 0) throw PreconditionError("vessel count and noise must be non-negative");
    if (!(stain_variation >= 0 && stain_variation < 1) || !(noise_variation >= 0 && noise_variation <= 1)) {
        throw PreconditionError("stain_variation must lie in [0, 1) and noise_variation in [0, 1]");
    }
    if (!batch_shifts.empty() && static_cast<int>(batch_shifts.size()) != batches) {
        throw PreconditionError("batch_shifts must list one offset per batch");
    }
}

std::array<double, 3> SynthSpec::shift_of(int batch) const {
    if (!batch_shifts.empty()) return batch_shifts[static_cast<std::size_t>(batch)];
    if (batches == 1) return {0, 0, 0};
    // Orthonormal basis of the plane orthogonal to (1,1,1).
    const double u[3] = {1 / std::sqrt(2.0), -1 / std::sqrt(2.0), 0};
    const double v[3] = {1 / std::sqrt(6.0), 1 / std::sqrt(6.0), -2 / std::sqrt(6.0)};
    const double angle = 2.0 * M_PI * batch / batches;
    std::array<double, 3> s{};
    for (int c = 0; c < 3; ++c) s[static_cast<std::size_t>(c)] = shift_magnitude * (std::cos(angle) * u[c] + std::sin(angle) * v[c]);
    return s;
}

SynthSpec::BatchAppearance SynthSpec::appearance_of(int batch) const {
    BatchAppearance a;
    a.shift = shift_of(batch);
    Rng rng(derive_seed(seed, 0xBA7C, static_cast<std::uint64_t>(batch)));
    a.stain = 1.0 - stain_variation * rng.uniform();
    a.noise = noise * (1.0 + noise_variation * (2.0 * rng.uniform() - 1.0));
    return a;
}

namespace {

struct Ellipse {
    double cx, cy, cz, rx, ry, rz, angle;
    bool contains(double x, double y, double z) const {
        const double dx = x - cx, dy = y - cy, dz = z - cz;
        const double c = std::cos(angle), s = std::sin(angle);
        const double u = (c * dx + s * dy) / rx, v = (-s * dx + c * dy) / ry, w = rz > 0 ? dz / rz : 0.0;
        return u * u + v * v + w * w <= 1.0;
    }
    double reach() const { return std::max({rx, ry, rz}); }
};

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

}  // namespace

SynthImage generate_synth_image(const SynthSpec& spec, int batch, int index) {
    spec.validate();
    const Dims d = spec.dims;
    const bool volumetric = d.z > 1;
    Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(batch), static_cast<std::uint64_t>(index)));
    const auto look = spec.appearance_of(batch);
    const SynthPalette base;
    auto shifted = [&](const std::array<double, 3>& c) {
        std::array<double, 3> o{};
        for (std::size_t k = 0; k < 3; ++k) {
            const double stained = base.background[k] + look.stain * (c[k] - base.background[k]);
            o[k] = std::clamp(stained + look.shift[k], 0.0, 255.0);
        }
        return o;
    };
    const auto bg = shifted(base.background), alt = shifted(base.alternate_tissue), nuc = shifted(base.nucleus),
               ves = shifted(base.vessel);

    const double min_dim = std::min(d.x, d.y);
    std::vector<Ellipse> vessels;
    for (int v = 0; v < spec.vessels; ++v) {
        const double r = rng.uniform(0.06, 0.12) * min_dim;
        vessels.push_back({rng.uniform(0, d.x - 1), rng.uniform(0, d.y - 1), volumetric ? rng.uniform(0, d.z - 1) : 0.0,
                           r * rng.uniform(1.0, 1.6), r, volumetric ? r : 0.0, rng.uniform(0, M_PI)});
    }

    // Nuclei first, then lesions; no blob touches another blob or a vessel.
    std::vector<Ellipse> blobs;
    const int max_attempts = 2000;
    auto place = [&](int count, const char* what) {
        for (int k = 0; k < count; ++k) {
            bool placed = false;
            for (int attempt = 0; attempt < max_attempts && !placed; ++attempt) {
                const double ry = rng.uniform(spec.min_radius, spec.max_radius);
                const double rx = std::min(spec.max_radius, ry * rng.uniform(1.0, 1.35));
                const double rz = volumetric ? ry : 0.0;
                const double margin = rx + 1;
                if (d.x <= 2 * margin || d.y <= 2 * margin) break;
                Ellipse e{std::round(rng.uniform(margin, d.x - 1 - margin)), std::round(rng.uniform(margin, d.y - 1 - margin)),
                          volumetric ? std::round(rng.uniform(0, d.z - 1)) : 0.0, rx, ry, rz, rng.uniform(0, M_PI)};
                bool ok = true;
                for (const auto& v : vessels)
                    ok = ok && std::hypot(e.cx - v.cx, e.cy - v.cy) > v.reach() + e.reach() + 2;
                for (const auto& o : blobs) {
                    const double dist = std::sqrt((e.cx - o.cx) * (e.cx - o.cx) + (e.cy - o.cy) * (e.cy - o.cy) +
                                                  (e.cz - o.cz) * (e.cz - o.cz));
                    ok = ok && dist > e.reach() + o.reach() + 2.0;
                }
                if (ok) {
                    blobs.push_back(e);
                    placed = true;
                }
            }
            if (!placed) {
                throw PreconditionError("cannot place " + std::to_string(count) + " non-touching " + what + " in a " +
                                        to_string(d) + " image after " + std::to_string(max_attempts) +
                                        " attempts; lower the count or radius");
            }
        }
    };
    place(static_cast<int>(rng.uniform_int(spec.min_nuclei, spec.max_nuclei)), "nuclei");
    const std::size_t nucleus_count = blobs.size();
    place(static_cast<int>(rng.uniform_int(spec.min_lesions, spec.max_lesions)), "lesions");

    SynthImage img;
    img.id = "b" + std::to_string(batch) + "_i" + std::to_string(index);
    img.batch = batch;
    img.volume = RasterVolume(d);
    img.truth = LabelImage(d);
    img.gold.image_id = img.id;
    // Palette index per voxel: 0 tissue, 1 alternate tissue, 2 nucleus, 3 vessel/lesion.
    std::vector<std::uint8_t> tone(d.count(), 0);
    {
        // Two-tone tissue from a jittered-grid Voronoi tessellation.
        const int cell = 32;
        const int gx = (d.x + cell - 1) / cell, gy = (d.y + cell - 1) / cell, gz = volumetric ? (d.z + cell - 1) / cell : 1;
        struct Seed {
            double x, y, z;
            bool alt;
        };
        std::vector<Seed> seeds(static_cast<std::size_t>(gx) * gy * gz);
        for (auto& sd : seeds) {
            const auto k = static_cast<std::size_t>(&sd - seeds.data());
            const int cx = static_cast<int>(k % gx), cy = static_cast<int>(k / gx % gy), cz = static_cast<int>(k / gx / gy);
            sd = {(cx + rng.uniform()) * cell, (cy + rng.uniform()) * cell, volumetric ? (cz + rng.uniform()) * cell : 0.0,
                  rng.uniform() < spec.alt_tissue_fraction};
        }
        for (int z = 0; z < d.z; ++z)
            for (int y = 0; y < d.y; ++y)
                for (int x = 0; x < d.x; ++x) {
                    const int cx = x / cell, cy = y / cell, cz = volumetric ? z / cell : 0;
                    double best = 1e300;
                    bool alt = false;
                    for (int dz = volumetric ? -1 : 0; dz <= (volumetric ? 1 : 0); ++dz)
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                const int nx = cx + dx, ny = cy + dy, nz = cz + dz;
                                if (nx < 0 || ny < 0 || nz < 0 || nx >= gx || ny >= gy || nz >= gz) continue;
                                const auto& sd = seeds[(static_cast<std::size_t>(nz) * gy + ny) * gx + nx];
                                const double dd = (x - sd.x) * (x - sd.x) + (y - sd.y) * (y - sd.y) + (z - sd.z) * (z - sd.z);
                                if (dd < best) {
                                    best = dd;
                                    alt = sd.alt;
                                }
                            }
                    tone[linear_index(d, x, y, z)] = alt ? 1 : 0;
                }
    }
    auto paint = [&](const Ellipse& e, std::uint8_t t, std::uint32_t label) {
        const double r = e.reach();
        const int x0 = std::max(0, static_cast<int>(std::floor(e.cx - r))), x1 = std::min(d.x - 1, static_cast<int>(std::ceil(e.cx + r)));
        const int y0 = std::max(0, static_cast<int>(std::floor(e.cy - r))), y1 = std::min(d.y - 1, static_cast<int>(std::ceil(e.cy + r)));
        const int z0 = std::max(0, static_cast<int>(std::floor(e.cz - e.rz))), z1 = std::min(d.z - 1, static_cast<int>(std::ceil(e.cz + e.rz)));
        for (int z = z0; z <= z1; ++z)
            for (int y = y0; y <= y1; ++y)
                for (int x = x0; x <= x1; ++x) {
                    if (!e.contains(x, y, z)) continue;
                    const auto i = linear_index(d, x, y, z);
                    tone[i] = t;
                    if (label) img.truth.labels[i] = label;
                }
    };
    for (const auto& v : vessels) paint(v, 3, 0);
    for (std::size_t k = 0; k < blobs.size(); ++k)
        paint(blobs[k], k < nucleus_count ? 2 : 3, k < nucleus_count ? static_cast<std::uint32_t>(k + 1) : 0);
    const std::array<const std::array<double, 3>*, 4> colors{&bg, &alt, &nuc, &ves};
    for (std::size_t i = 0; i < tone.size(); ++i) {
        const auto& color = *colors[tone[i]];
        auto* px = img.volume.mutable_data().data() + 3 * i;
        for (std::size_t c = 0; c < 3; ++c) {
            const double n = look.noise > 0 ? look.noise * rng.normal() : 0.0;
            px[c] = to_byte(color[c] + n);
        }
    }
    for (std::size_t k = 0; k < nucleus_count; ++k)
        img.gold.points.push_back({static_cast<int>(blobs[k].cx), static_cast<int>(blobs[k].cy), static_cast<int>(blobs[k].cz)});
    return img;
}

std::vector<SynthImage> generate_synth_corpus(const SynthSpec& spec) {
    spec.validate();
    std::vector<SynthImage> out(static_cast<std::size_t>(spec.batches * spec.images_per_batch));
    parallel_for(out.size(), [&](std::size_t k) {
        out[k] = generate_synth_image(spec, static_cast<int>(k) / spec.images_per_batch,
                                      static_cast<int>(k) % spec.images_per_batch);
    });
    return out;
}

BinaryMask foreground_of(const LabelImage& labels) {
    BinaryMask m(labels.dims);
    for (std::size_t i = 0; i < labels.labels.size(); ++i) m.values[i] = labels.labels[i] ? 1 : 0;
    return m;
}

void save_synth_corpus(const std::vector<SynthImage>& corpus, const SynthSpec& spec, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["seed"] = spec.seed;
    j["dims"] = {spec.dims.x, spec.dims.y, spec.dims.z};
    j["batches"] = spec.batches;
    j["images_per_batch"] = spec.images_per_batch;
    auto& imgs = j["images"] = nlohmann::json::array();
    const std::string ext = spec.dims.z > 1 ? ".tif" : ".png";
    for (const auto& img : corpus) {
        write_volume(img.volume, dir / (img.id + ext));
        save_gold_standard(img.gold, dir / (img.id + "_gold.csv"));
        write_label_image(img.truth, dir / (img.id + "_truth" + ext), LabelWriteMode::mask);
        const auto s = spec.shift_of(img.batch);
        imgs.push_back({{"id", img.id},
                        {"batch", img.batch},
                        {"image", img.id + ext},
                        {"gold", img.id + "_gold.csv"},
                        {"truth", img.id + "_truth" + ext},
                        {"nuclei", img.gold.points.size()},
                        {"shift", {s[0], s[1], s[2]}}});
    }
    write_file_atomic(dir / "corpus.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Scripted annotator
// ---------------------------------------------------------------------------

std::vector<AnnotationStroke> simulate_initial_strokes(const LabelImage& truth, const AnnotatorParams& params,
                                                       std::uint64_t seed) {
    const Dims d = truth.dims;
    Rng rng(derive_seed(seed, 0xA22));
    // Nucleus voxel nearest each object's centroid.
    const std::uint32_t n = truth.max_label();
    std::vector<double> sx(n + 1, 0), sy(n + 1, 0), sz(n + 1, 0), cnt(n + 1, 0);
    for (std::size_t i = 0; i < truth.labels.size(); ++i) {
        const auto l = truth.labels[i];
        if (!l) continue;
        const auto c = coord_of(d, i);
        sx[l] += c.x;
        sy[l] += c.y;
        sz[l] += c.z;
        cnt[l] += 1;
    }
    std::vector<std::uint32_t> objs;
    for (std::uint32_t l = 1; l <= n; ++l)
        if (cnt[l] > 0) objs.push_back(l);
    rng.shuffle(objs);
    std::vector<AnnotationStroke> strokes;
    for (std::size_t k = 0; k < objs.size() && static_cast<int>(k) < params.initial_foreground; ++k) {
        const auto l = objs[k];
        VoxelCoord c{static_cast<int>(std::lround(sx[l] / cnt[l])), static_cast<int>(std::lround(sy[l] / cnt[l])),
                     static_cast<int>(std::lround(sz[l] / cnt[l]))};
        if (truth.labels[linear_index(d, c)] != l) continue;
        AnnotationStroke s;
        s.class_label = 1;
        s.path = {c};
        s.radius = 1.0;
        strokes.push_back(s);
    }
    const BinaryMask fg = foreground_of(truth);
    BinaryMask near = dilate(fg, 2);
    std::vector<std::size_t> bg;
    for (std::size_t i = 0; i < near.values.size(); ++i)
        if (!near[i]) bg.push_back(i);
    for (int k = 0; k < params.initial_background && !bg.empty(); ++k) {
        AnnotationStroke s;
        s.class_label = 0;
        s.voxels = {coord_of(d, bg[rng.uniform_index(bg.size())])};
        strokes.push_back(s);
    }
    return strokes;
}

std::vector<AnnotationStroke> simulate_corrections(const LabelImage& truth, const Oversegmentation& seg,
                                                   const ProbabilityMap& prob, const AnnotatorParams& params) {
    if (!(seg.dims() == truth.dims) || prob.p.size() != seg.size()) {
        throw DimensionMismatchError("truth, supervoxels and probabilities must describe the same image");
    }
    std::vector<std::size_t> fg(seg.size(), 0), total(seg.size(), 0), sample(seg.size(), 0);
    std::vector<bool> has_sample(seg.size(), false);
    for (std::size_t i = 0; i < truth.labels.size(); ++i) {
        const auto s = seg.label_at(i);
        total[s]++;
        if (truth.labels[i]) fg[s]++;
    }
    struct Err {
        double confidence;
        std::uint32_t id;
        int label;
    };
    std::vector<Err> errs;
    for (std::uint32_t s = 0; s < seg.size(); ++s) {
        if (total[s] == 0) continue;
        const int label = 2 * fg[s] >= total[s] ? 1 : 0;
        const bool predicted = prob.p[s] >= 0.5;
        if (predicted != (label == 1)) errs.push_back({std::abs(prob.p[s] - 0.5), s, label});
    }
    std::sort(errs.begin(), errs.end(), [](const Err& a, const Err& b) {
        return a.confidence != b.confidence ? a.confidence > b.confidence : a.id < b.id;
    });
    if (static_cast<int>(errs.size()) > params.corrections_per_round) errs.resize(static_cast<std::size_t>(params.corrections_per_round));
    // First voxel of each chosen supervoxel whose truth matches its majority.
    std::vector<int> want(seg.size(), -1);
    for (const auto& e : errs) want[e.id] = e.label;
    std::vector<AnnotationStroke> strokes(errs.size());
    std::vector<int> where(seg.size(), -1);
    for (std::size_t k = 0; k < errs.size(); ++k) where[errs[k].id] = static_cast<int>(k);
    for (std::size_t i = 0; i < truth.labels.size(); ++i) {
        const auto s = seg.label_at(i);
        if (want[s] < 0 || has_sample[s]) continue;
        if ((truth.labels[i] != 0) != (want[s] == 1)) continue;
        has_sample[s] = true;
        auto& st = strokes[static_cast<std::size_t>(where[s])];
        st.class_label = want[s];
        st.voxels = {coord_of(truth.dims, i)};
    }
    return strokes;
}

}  // namespace svseg
