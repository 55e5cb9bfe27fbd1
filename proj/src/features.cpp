#include "svseg/features.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

namespace svseg {

// ---------------------------------------------------------------------------
// Configuration and layout
// ---------------------------------------------------------------------------

void FeatureConfig::validate() const {
    if (!(enable_local_hist || enable_neighborhood_hist || enable_gradient || enable_log || enable_texture)) {
        throw PreconditionError("feature config: at least one category must be enabled");
    }
    if (histogram_bins < 1 || histogram_bins > 256) throw PreconditionError("feature config: bins must be in [1, 256]");
    if ((enable_gradient || enable_log) && sigmas.empty()) throw PreconditionError("feature config: sigmas empty");
    for (std::size_t i = 0; i < sigmas.size(); ++i) {
        if (!(sigmas[i] > 0.0)) throw PreconditionError("feature config: sigmas must be positive");
        if (i > 0 && !(sigmas[i] > sigmas[i - 1])) {
            throw PreconditionError("feature config: sigmas must be strictly increasing");
        }
    }
    if (glcm_levels < 2 || glcm_levels > 256) throw PreconditionError("feature config: glcm_levels must be in [2, 256]");
}

namespace {

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

}  // namespace

std::string FeatureConfig::canonical() const {
    std::ostringstream os;
    os << "lh=" << enable_local_hist << ";nh=" << enable_neighborhood_hist << ";grad=" << enable_gradient
       << ";log=" << enable_log << ";tex=" << enable_texture << ";bins=" << histogram_bins << ";sigmas=";
    for (std::size_t i = 0; i < sigmas.size(); ++i) os << (i ? "," : "") << format_double(sigmas[i]);
    os << ";levels=" << glcm_levels;
    return os.str();
}

FeatureConfig FeatureConfig::parse(const std::string& text) {
    FeatureConfig c;
    std::istringstream is(text);
    std::string item;
    auto flag = [](const std::string& v) {
        if (v != "0" && v != "1") throw FormatError("feature config: bad flag '" + v + "'");
        return v == "1";
    };
    while (std::getline(is, item, ';')) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) throw FormatError("feature config: malformed entry '" + item + "'");
        const std::string key = item.substr(0, eq), val = item.substr(eq + 1);
        try {
            if (key == "lh") c.enable_local_hist = flag(val);
            else if (key == "nh") c.enable_neighborhood_hist = flag(val);
            else if (key == "grad") c.enable_gradient = flag(val);
            else if (key == "log") c.enable_log = flag(val);
            else if (key == "tex") c.enable_texture = flag(val);
            else if (key == "bins") c.histogram_bins = std::stoi(val);
            else if (key == "levels") c.glcm_levels = std::stoi(val);
            else if (key == "sigmas") {
                c.sigmas.clear();
                std::istringstream vs(val);
                std::string s;
                while (std::getline(vs, s, ',')) c.sigmas.push_back(std::stod(s));
            } else {
                throw FormatError("feature config: unknown key '" + key + "'");
            }
        } catch (const std::logic_error&) {
            throw FormatError("feature config: bad value for '" + key + "'");
        }
    }
    return c;
}

FeatureConfig FeatureConfig::from_categories(const std::string& list) {
    FeatureConfig c;
    if (list == "all" || list.empty()) return c;
    c.enable_local_hist = c.enable_neighborhood_hist = c.enable_gradient = c.enable_log = c.enable_texture = false;
    std::istringstream is(list);
    std::string item;
    while (std::getline(is, item, ',')) {
        if (item == "lh") c.enable_local_hist = true;
        else if (item == "nh") c.enable_neighborhood_hist = true;
        else if (item == "grad") c.enable_gradient = true;
        else if (item == "log") c.enable_log = true;
        else if (item == "tex") c.enable_texture = true;
        else throw PreconditionError("unknown feature category '" + item + "' (expected lh, nh, grad, log, tex)");
    }
    c.validate();
    return c;
}

FeatureLayout layout_of(const FeatureConfig& config) {
    FeatureLayout layout;
    auto add = [&](bool on, const char* name, std::size_t size) {
        if (!on) return;
        layout.blocks.push_back({name, layout.row_length, size});
        layout.row_length += size;
    };
    const std::size_t hist = 3 * static_cast<std::size_t>(config.histogram_bins);
    const std::size_t deriv = 3 * config.sigmas.size();
    add(config.enable_local_hist, "local_hist", hist);
    add(config.enable_neighborhood_hist, "neighborhood_hist", hist);
    add(config.enable_gradient, "gradient", deriv);
    add(config.enable_log, "log", deriv);
    add(config.enable_texture, "texture", 6);
    return layout;
}

FeatureMatrix::FeatureMatrix(FeatureConfig config, std::size_t rows)
    : config_(std::move(config)), rows_(rows), cols_(layout_of(config_).row_length), values_(rows_ * cols_, 0.0f) {}

// ---------------------------------------------------------------------------
// Histograms
// ---------------------------------------------------------------------------

namespace {

std::vector<std::uint32_t> raw_histograms(const RasterVolume& vol, const Oversegmentation& seg, int bins) {
    const std::size_t width = 3 * static_cast<std::size_t>(bins);
    std::vector<std::uint32_t> counts(seg.size() * width, 0);
    for (std::size_t i = 0; i < vol.voxel_count(); ++i) {
        const std::size_t base = seg.label_at(i) * width;
        for (int c = 0; c < 3; ++c) {
            const int bin = vol.channel(i, c) * bins / 256;
            ++counts[base + static_cast<std::size_t>(c * bins + bin)];
        }
    }
    return counts;
}

}  // namespace

BlockMatrix color_histograms(const RasterVolume& vol, const Oversegmentation& seg, HistogramScope scope, int bins) {
    seg.check_attached(vol);
    const std::size_t width = 3 * static_cast<std::size_t>(bins);
    const auto counts = raw_histograms(vol, seg, bins);
    BlockMatrix out{seg.size(), width, std::vector<double>(seg.size() * width, 0.0)};
    std::vector<std::uint64_t> pooled(width);
    for (std::uint32_t id = 0; id < seg.size(); ++id) {
        std::fill(pooled.begin(), pooled.end(), 0);
        auto add = [&](std::uint32_t s) {
            for (std::size_t k = 0; k < width; ++k) pooled[k] += counts[s * width + k];
        };
        add(id);
        std::uint64_t total = seg.at(id).size;
        if (scope == HistogramScope::neighborhood) {
            for (auto nb : seg.neighbors(id)) {
                add(nb);
                total += seg.at(nb).size;
            }
        }
        if (total == 0) throw Error("empty supervoxel " + std::to_string(id) + " violates the partition invariant");
        for (std::size_t k = 0; k < width; ++k) {
            out.values[id * width + k] = static_cast<double>(pooled[k]) / static_cast<double>(total);
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gaussian derivatives
// ---------------------------------------------------------------------------

int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * n;
    int m = i % period;
    if (m < 0) m += period;
    return m < n ? m : period - 1 - m;
}

std::vector<double> gaussian_smooth(const std::vector<double>& field, const Dims& d, double sigma) {
    const int radius = static_cast<int>(std::ceil(4.0 * sigma));
    std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int k = -radius; k <= radius; ++k) {
        const double w = std::exp(-(k * k) / (2.0 * sigma * sigma));
        kernel[static_cast<std::size_t>(k + radius)] = w;
        sum += w;
    }
    for (double& w : kernel) w /= sum;

    std::vector<double> cur = field;
    std::vector<double> next(field.size());
    const int extent[3] = {d.x, d.y, d.z};
    const std::size_t stride[3] = {1, static_cast<std::size_t>(d.x),
                                   static_cast<std::size_t>(d.x) * static_cast<std::size_t>(d.y)};
    std::vector<double> line;
    for (int axis = 0; axis < 3; ++axis) {
        const int n = extent[axis];
        if (n <= 1) continue;
        line.resize(static_cast<std::size_t>(n));
        for (std::size_t i = 0; i < cur.size(); ++i) {
            const VoxelCoord c = coord_of(d, i);
            const int pos[3] = {c.x, c.y, c.z};
            if (pos[axis] != 0) continue;
            for (int t = 0; t < n; ++t) line[static_cast<std::size_t>(t)] = cur[i + static_cast<std::size_t>(t) * stride[axis]];
            for (int t = 0; t < n; ++t) {
                double acc = 0.0;
                for (int k = -radius; k <= radius; ++k) {
                    acc += kernel[static_cast<std::size_t>(k + radius)] *
                           line[static_cast<std::size_t>(reflect_index(t + k, n))];
                }
                next[i + static_cast<std::size_t>(t) * stride[axis]] = acc;
            }
        }
        std::swap(cur, next);
    }
    return cur;
}

namespace {

std::vector<double> channel_field(const RasterVolume& vol, int c) {
    std::vector<double> f(vol.voxel_count());
    for (std::size_t i = 0; i < f.size(); ++i) f[i] = vol.channel(i, c);
    return f;
}

/// Gradient magnitude and LoG from central differences on a smoothed field.
void derivatives(const std::vector<double>& s, const Dims& d, std::vector<double>* grad, std::vector<double>* lap) {
    const int extent[3] = {d.x, d.y, d.z};
    const std::size_t stride[3] = {1, static_cast<std::size_t>(d.x),
                                   static_cast<std::size_t>(d.x) * static_cast<std::size_t>(d.y)};
    if (grad) grad->assign(s.size(), 0.0);
    if (lap) lap->assign(s.size(), 0.0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        const VoxelCoord c = coord_of(d, i);
        const int pos[3] = {c.x, c.y, c.z};
        double g2 = 0.0, l = 0.0;
        for (int a = 0; a < 3; ++a) {
            const int n = extent[a];
            if (n <= 1) continue;
            const std::size_t base = i - static_cast<std::size_t>(pos[a]) * stride[a];
            const double fp = s[base + static_cast<std::size_t>(reflect_index(pos[a] + 1, n)) * stride[a]];
            const double fm = s[base + static_cast<std::size_t>(reflect_index(pos[a] - 1, n)) * stride[a]];
            const double g = 0.5 * (fp - fm);
            g2 += g * g;
            l += fp - 2.0 * s[i] + fm;
        }
        if (grad) (*grad)[i] = std::sqrt(g2);
        if (lap) (*lap)[i] = l;
    }
}

void average_into(const std::vector<double>& field, const Oversegmentation& seg, BlockMatrix& out, std::size_t col) {
    std::vector<double> sums(seg.size(), 0.0);
    for (std::size_t i = 0; i < field.size(); ++i) sums[seg.label_at(i)] += field[i];
    for (std::uint32_t id = 0; id < seg.size(); ++id) {
        out.values[id * out.cols + col] = sums[id] / seg.at(id).size;
    }
}

void derivative_blocks(const RasterVolume& vol, const Oversegmentation& seg, const std::vector<double>& sigmas,
                       BlockMatrix* grad_out, BlockMatrix* log_out) {
    seg.check_attached(vol);
    const std::size_t cols = 3 * sigmas.size();
    if (grad_out) *grad_out = {seg.size(), cols, std::vector<double>(seg.size() * cols, 0.0)};
    if (log_out) *log_out = {seg.size(), cols, std::vector<double>(seg.size() * cols, 0.0)};
    parallel_for(cols, [&](std::size_t task) {
        const int c = static_cast<int>(task / sigmas.size());
        const double sigma = sigmas[task % sigmas.size()];
        const auto smoothed = gaussian_smooth(channel_field(vol, c), vol.dims(), sigma);
        std::vector<double> g, l;
        derivatives(smoothed, vol.dims(), grad_out ? &g : nullptr, log_out ? &l : nullptr);
        if (grad_out) average_into(g, seg, *grad_out, task);
        if (log_out) average_into(l, seg, *log_out, task);
    });
}

}  // namespace

BlockMatrix gradient_block(const RasterVolume& vol, const Oversegmentation& seg, const std::vector<double>& sigmas) {
    BlockMatrix out;
    derivative_blocks(vol, seg, sigmas, &out, nullptr);
    return out;
}

BlockMatrix log_block(const RasterVolume& vol, const Oversegmentation& seg, const std::vector<double>& sigmas) {
    BlockMatrix out;
    derivative_blocks(vol, seg, sigmas, nullptr, &out);
    return out;
}

// ---------------------------------------------------------------------------
// Texture
// ---------------------------------------------------------------------------

std::vector<double> luma_image(const RasterVolume& vol) {
    std::vector<double> y(vol.voxel_count());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = luma(vol.rgb(i));
    return y;
}

int quantize_luma(double y, int levels) {
    const int q = static_cast<int>(std::floor(y * levels / 256.0));
    return std::clamp(q, 0, levels - 1);
}

std::vector<Offset> default_glcm_offsets(int dimensionality) {
    if (dimensionality == 3) return {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}, {1, 1, 0}, {1, -1, 0}};
    return {{1, 0, 0}, {0, 1, 0}, {1, 1, 0}, {1, -1, 0}};
}

std::array<double, 6> glcm_statistics(const std::vector<double>& p, int levels) {
    const auto L = static_cast<std::size_t>(levels);
    double mu_x = 0.0, mu_y = 0.0;
    for (std::size_t i = 0; i < L; ++i) {
        for (std::size_t j = 0; j < L; ++j) {
            const double v = p[i * L + j];
            mu_x += static_cast<double>(i) * v;
            mu_y += static_cast<double>(j) * v;
        }
    }
    double inertia = 0, shade = 0, prominence = 0, idm = 0, energy = 0, entropy = 0;
    for (std::size_t i = 0; i < L; ++i) {
        for (std::size_t j = 0; j < L; ++j) {
            const double v = p[i * L + j];
            if (v == 0.0) continue;
            const double diff = static_cast<double>(i) - static_cast<double>(j);
            const double s = static_cast<double>(i + j) - mu_x - mu_y;
            inertia += diff * diff * v;
            shade += s * s * s * v;
            prominence += s * s * s * s * v;
            idm += v / (1.0 + diff * diff);
            energy += v * v;
            entropy -= v * std::log(v);
        }
    }
    return {inertia, shade, prominence, idm, energy, entropy};
}

BlockMatrix texture_block(const RasterVolume& vol, const Oversegmentation& seg, int levels,
                          const std::vector<Offset>& offsets_in, TextureDiagnostics* diag) {
    seg.check_attached(vol);
    const Dims d = vol.dims();
    const auto offsets = offsets_in.empty() ? default_glcm_offsets(d.dimensionality()) : offsets_in;
    std::vector<int> q(vol.voxel_count());
    for (std::size_t i = 0; i < q.size(); ++i) q[i] = quantize_luma(luma(vol.rgb(i)), levels);

    BlockMatrix out{seg.size(), 6, std::vector<double>(seg.size() * 6, 0.0)};
    const auto L = static_cast<std::size_t>(levels);
    std::vector<char> empty(seg.size(), 0);
    const std::size_t chunk = 256;
    const std::size_t chunks = (seg.size() + chunk - 1) / chunk;
    parallel_for(chunks, [&](std::size_t ch) {
        std::vector<double> glcm(L * L);
        const std::size_t lo = ch * chunk, hi = std::min(seg.size(), lo + chunk);
        for (std::size_t id = lo; id < hi; ++id) {
            std::fill(glcm.begin(), glcm.end(), 0.0);
            double pairs = 0.0;
            for (const Run& run : seg.supervoxels()[id].runs) {
                for (std::uint32_t k = 0; k < run.length; ++k) {
                    const int x = run.start.x + static_cast<int>(k), y = run.start.y, z = run.start.z;
                    const std::size_t i = linear_index(d, x, y, z);
                    for (const Offset& o : offsets) {
                        const VoxelCoord nb{x + o[0], y + o[1], z + o[2]};
                        if (!in_bounds(d, nb)) continue;
                        const std::size_t j = linear_index(d, nb);
                        if (seg.label_at(j) != id) continue;
                        const auto a = static_cast<std::size_t>(q[i]), b = static_cast<std::size_t>(q[j]);
                        glcm[a * L + b] += 1.0;
                        glcm[b * L + a] += 1.0;
                        pairs += 2.0;
                    }
                }
            }
            if (pairs == 0.0) {
                empty[id] = 1;
                continue;
            }
            for (double& v : glcm) v /= pairs;
            const auto stats = glcm_statistics(glcm, levels);
            std::copy(stats.begin(), stats.end(), out.values.begin() + static_cast<std::ptrdiff_t>(id * 6));
        }
    });
    if (diag) diag->supervoxels_without_pairs = static_cast<std::size_t>(std::count(empty.begin(), empty.end(), 1));
    return out;
}

// ---------------------------------------------------------------------------
// Assembly and cache
// ---------------------------------------------------------------------------

FeatureMatrix compute_features(const RasterVolume& vol, const Oversegmentation& seg, const FeatureConfig& config) {
    config.validate();
    seg.check_attached(vol);
    FeatureMatrix fm(config, seg.size());
    const FeatureLayout layout = layout_of(config);
    auto place = [&](const BlockMatrix& b, std::size_t offset) {
        for (std::size_t r = 0; r < b.rows; ++r) {
            auto row = fm.row(r);
            for (std::size_t c = 0; c < b.cols; ++c) row[offset + c] = static_cast<float>(b.at(r, c));
        }
    };
    BlockMatrix grad, lap;
    if (config.enable_gradient || config.enable_log) {
        derivative_blocks(vol, seg, config.sigmas, config.enable_gradient ? &grad : nullptr,
                          config.enable_log ? &lap : nullptr);
    }
    for (const auto& block : layout.blocks) {
        if (block.name == "local_hist") {
            place(color_histograms(vol, seg, HistogramScope::local, config.histogram_bins), block.offset);
        } else if (block.name == "neighborhood_hist") {
            place(color_histograms(vol, seg, HistogramScope::neighborhood, config.histogram_bins), block.offset);
        } else if (block.name == "gradient") {
            place(grad, block.offset);
        } else if (block.name == "log") {
            place(lap, block.offset);
        } else if (block.name == "texture") {
            TextureDiagnostics diag;
            place(texture_block(vol, seg, config.glcm_levels, {}, &diag), block.offset);
        }
    }
    return fm;
}

std::vector<std::uint8_t> serialize_features(const FeatureMatrix& fm) {
    ByteWriter w;
    w.magic("SVFT");
    w.u32(kSvftVersion);
    w.u64(fm.rows());
    w.u32(static_cast<std::uint32_t>(fm.cols()));
    w.str(fm.config().canonical());
    for (float v : fm.values()) w.f32(v);
    w.seal();
    return w.take();
}

FeatureMatrix deserialize_features(std::span<const std::uint8_t> bytes) {
    ByteReader r(verify_sealed(bytes, "feature cache"));
    r.expect_magic("SVFT", "feature cache");
    const std::uint32_t version = r.u32();
    if (version != kSvftVersion) throw FormatError("feature cache: unsupported format version " + std::to_string(version));
    const std::uint64_t rows = r.u64();
    const std::uint32_t cols = r.u32();
    FeatureConfig config = FeatureConfig::parse(r.str());
    config.validate();
    if (layout_of(config).row_length != cols) throw FormatError("feature cache: row length does not match config");
    if (rows * cols * 4 != r.remaining()) throw FormatError("feature cache: payload size mismatch");
    FeatureMatrix fm(config, rows);
    for (std::uint64_t rr = 0; rr < rows; ++rr) {
        auto row = fm.row(rr);
        for (std::uint32_t c = 0; c < cols; ++c) row[c] = r.f32();
    }
    return fm;
}

void save_features(const FeatureMatrix& fm, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_features(fm));
}

FeatureMatrix load_features(const std::filesystem::path& path) { return deserialize_features(read_file_bytes(path)); }

}  // namespace svseg
