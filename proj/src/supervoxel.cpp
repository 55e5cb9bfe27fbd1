#include "svseg/supervoxel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <queue>

namespace svseg {

int grid_step(int target_size, int dimensionality) {
    const double s = std::round(std::pow(static_cast<double>(target_size), 1.0 / dimensionality));
    return std::max(1, static_cast<int>(s));
}

int auto_target_size(std::size_t voxel_count) {
    const auto t = static_cast<long long>(std::llround(static_cast<double>(voxel_count) / 50000.0));
    return static_cast<int>(std::clamp<long long>(t, 16, 4096));
}

std::array<double, 3> srgb_to_lab(Rgb c) {
    auto linear = [](std::uint8_t v) {
        const double s = v / 255.0;
        return s <= 0.04045 ? s / 12.92 : std::pow((s + 0.055) / 1.055, 2.4);
    };
    const double r = linear(c[0]), g = linear(c[1]), b = linear(c[2]);
    const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    const double y = (0.2126729 * r + 0.7151522 * g + 0.0721750 * b) / 1.0;
    const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    auto f = [](double t) { return t > 0.008856 ? std::cbrt(t) : 7.787 * t + 16.0 / 116.0; };
    const double fx = f(x), fy = f(y), fz = f(z);
    return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

// ---------------------------------------------------------------------------
// Oversegmentation
// ---------------------------------------------------------------------------

Oversegmentation Oversegmentation::from_label_field(const RasterVolume& vol, std::vector<std::uint32_t> labels,
                                                    int target_size) {
    const Dims d = vol.dims();
    if (labels.size() != d.count()) throw PreconditionError("label field size does not match volume");
    std::uint32_t n = 0;
    for (auto l : labels) n = std::max(n, l + 1);

    Oversegmentation seg;
    seg.dims_ = d;
    seg.target_size_ = target_size;
    seg.supervoxels_.resize(n);
    seg.adjacency_.resize(n);
    std::vector<std::array<double, 6>> sums(n, std::array<double, 6>{});

    for (int z = 0; z < d.z; ++z) {
        for (int y = 0; y < d.y; ++y) {
            int x = 0;
            while (x < d.x) {
                const std::size_t i0 = linear_index(d, x, y, z);
                const std::uint32_t l = labels[i0];
                int x1 = x;
                while (x1 < d.x && labels[i0 + static_cast<std::size_t>(x1 - x)] == l) ++x1;
                auto& sv = seg.supervoxels_[l];
                const auto len = static_cast<std::uint32_t>(x1 - x);
                sv.runs.push_back({{x, y, z}, len});
                sv.size += len;
                auto& s = sums[l];
                for (int xx = x; xx < x1; ++xx) {
                    const Rgb c = vol.rgb(i0 + static_cast<std::size_t>(xx - x));
                    s[0] += c[0];
                    s[1] += c[1];
                    s[2] += c[2];
                }
                // sum of x over [x, x1)
                s[3] += (static_cast<double>(x) + static_cast<double>(x1 - 1)) * len / 2.0;
                s[4] += static_cast<double>(y) * len;
                s[5] += static_cast<double>(z) * len;
                x = x1;
            }
        }
    }
    for (std::uint32_t l = 0; l < n; ++l) {
        auto& sv = seg.supervoxels_[l];
        sv.id = l;
        if (sv.size == 0) throw PreconditionError("label field is not dense: label " + std::to_string(l) + " is empty");
        for (int k = 0; k < 3; ++k) {
            sv.mean_color[k] = sums[l][k] / sv.size;
            sv.centroid[k] = sums[l][3 + k] / sv.size;
        }
    }
    const std::size_t sx = 1, sy = static_cast<std::size_t>(d.x), sz = sy * static_cast<std::size_t>(d.y);
    for (int z = 0; z < d.z; ++z) {
        for (int y = 0; y < d.y; ++y) {
            for (int x = 0; x < d.x; ++x) {
                const std::size_t i = linear_index(d, x, y, z);
                const std::uint32_t a = labels[i];
                auto link = [&](std::size_t j) {
                    const std::uint32_t b = labels[j];
                    if (a != b) {
                        seg.adjacency_[a].push_back(b);
                        seg.adjacency_[b].push_back(a);
                    }
                };
                if (x + 1 < d.x) link(i + sx);
                if (y + 1 < d.y) link(i + sy);
                if (z + 1 < d.z) link(i + sz);
            }
        }
    }
    for (auto& nb : seg.adjacency_) {
        std::sort(nb.begin(), nb.end());
        nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    }
    seg.label_field_ = std::move(labels);
    return seg;
}

const Supervoxel& Oversegmentation::at(std::uint32_t id) const {
    if (id >= supervoxels_.size()) throw PreconditionError("unknown supervoxel id " + std::to_string(id));
    return supervoxels_[id];
}

std::uint32_t Oversegmentation::label_of(const VoxelCoord& c) const {
    if (!in_bounds(dims_, c)) {
        throw PreconditionError("coordinate (" + std::to_string(c.x) + "," + std::to_string(c.y) + "," +
                                std::to_string(c.z) + ") out of bounds " + to_string(dims_));
    }
    return label_field_[linear_index(dims_, c)];
}

const std::vector<std::uint32_t>& Oversegmentation::neighbors(std::uint32_t id) const {
    if (id >= adjacency_.size()) throw PreconditionError("unknown supervoxel id " + std::to_string(id));
    return adjacency_[id];
}

void Oversegmentation::check_attached(const RasterVolume& vol) const {
    if (vol.dims() != dims_) {
        throw DimensionMismatchError("oversegmentation dims " + to_string(dims_) + " do not match volume dims " +
                                     to_string(vol.dims()));
    }
}

BinaryMask boundary_mask(const Oversegmentation& seg) {
    const Dims d = seg.dims();
    BinaryMask mask(d);
    const auto& lf = seg.label_field();
    for (int z = 0; z < d.z; ++z) {
        for (int y = 0; y < d.y; ++y) {
            for (int x = 0; x < d.x; ++x) {
                const std::size_t i = linear_index(d, x, y, z);
                auto mark = [&](std::size_t j) {
                    if (lf[i] != lf[j]) {
                        mask.values[i] = 1;
                        mask.values[j] = 1;
                    }
                };
                if (x + 1 < d.x) mark(i + 1);
                if (y + 1 < d.y) mark(i + static_cast<std::size_t>(d.x));
                if (z + 1 < d.z) mark(i + static_cast<std::size_t>(d.x) * static_cast<std::size_t>(d.y));
            }
        }
    }
    return mask;
}

// ---------------------------------------------------------------------------
// SLIC0
// ---------------------------------------------------------------------------

namespace {

struct Center {
    std::array<double, 3> lab;
    std::array<double, 3> pos;
};

using Field3 = std::vector<std::array<double, 3>>;

double lab_dist2(const std::array<double, 3>& a, const std::array<double, 3>& b) {
    const double d0 = a[0] - b[0], d1 = a[1] - b[1], d2 = a[2] - b[2];
    return d0 * d0 + d1 * d1 + d2 * d2;
}

double gradient_at(const Field3& lab, const Dims& d, int x, int y, int z) {
    auto at = [&](int xx, int yy, int zz) -> const std::array<double, 3>& {
        xx = std::clamp(xx, 0, d.x - 1);
        yy = std::clamp(yy, 0, d.y - 1);
        zz = std::clamp(zz, 0, d.z - 1);
        return lab[linear_index(d, xx, yy, zz)];
    };
    double g = lab_dist2(at(x + 1, y, z), at(x - 1, y, z)) + lab_dist2(at(x, y + 1, z), at(x, y - 1, z));
    if (d.z > 1) g += lab_dist2(at(x, y, z + 1), at(x, y, z - 1));
    return g;
}

/// Buckets of center ids on a grid of cell size S, rebuilt every iteration.
class CenterIndex {
public:
    CenterIndex(const Dims& d, int step, const std::vector<Center>& centers) : step_(step) {
        for (int a = 0; a < 3; ++a) cells_[a] = (dim(d, a) + step - 1) / step;
        buckets_.assign(static_cast<std::size_t>(cells_[0]) * cells_[1] * cells_[2], {});
        for (std::uint32_t k = 0; k < centers.size(); ++k) {
            buckets_[bucket_of(centers[k].pos)].push_back(k);
        }
    }

    template <class F>
    void for_candidates(int x, int y, int z, F&& f) const {
        const int cx = x / step_, cy = y / step_, cz = z / step_;
        for (int bz = std::max(0, cz - 1); bz <= std::min(cells_[2] - 1, cz + 1); ++bz)
            for (int by = std::max(0, cy - 1); by <= std::min(cells_[1] - 1, cy + 1); ++by)
                for (int bx = std::max(0, cx - 1); bx <= std::min(cells_[0] - 1, cx + 1); ++bx)
                    for (std::uint32_t k : buckets_[(static_cast<std::size_t>(bz) * cells_[1] + by) * cells_[0] + bx])
                        f(k);
    }

private:
    static int dim(const Dims& d, int a) { return a == 0 ? d.x : a == 1 ? d.y : d.z; }

    std::size_t bucket_of(const std::array<double, 3>& p) const {
        int b[3];
        for (int a = 0; a < 3; ++a) {
            b[a] = std::clamp(static_cast<int>(std::floor(p[a] / step_)), 0, cells_[a] - 1);
        }
        return (static_cast<std::size_t>(b[2]) * cells_[1] + b[1]) * cells_[0] + b[0];
    }

    int step_;
    int cells_[3];
    std::vector<std::vector<std::uint32_t>> buckets_;
};

constexpr std::uint32_t kUnassigned = std::numeric_limits<std::uint32_t>::max();

/// Merges stray fragments of each label. Returns a dense label field.
/// Cells per axis for the seed grid: floor or ceil of extent / target^(1/D)
/// per axis, choosing the combination whose cell count is closest to
/// N / target (then the one closest in aspect to the ideal step).
void initial_grid(const Dims& d, int target_size, int cells[3]) {
    const int D = d.dimensionality();
    const double step = std::pow(static_cast<double>(target_size), 1.0 / D);
    const double wanted = static_cast<double>(d.count()) / target_size;
    const int dims_arr[3] = {d.x, d.y, d.z};
    double ideal[3];
    for (int a = 0; a < 3; ++a) ideal[a] = a < D ? dims_arr[a] / step : 1.0;
    double best_count = std::numeric_limits<double>::infinity(), best_shape = best_count;
    for (int mask = 0; mask < (1 << D); ++mask) {
        int n[3] = {1, 1, 1};
        for (int a = 0; a < D; ++a) {
            const double v = (mask >> a & 1) ? std::ceil(ideal[a]) : std::floor(ideal[a]);
            n[a] = std::clamp(static_cast<int>(v), 1, dims_arr[a]);
        }
        const double count_err = std::abs(static_cast<double>(n[0]) * n[1] * n[2] - wanted);
        double shape_err = 0.0;
        for (int a = 0; a < D; ++a) shape_err += std::abs(n[a] - ideal[a]);
        if (count_err < best_count - 1e-9 || (std::abs(count_err - best_count) <= 1e-9 && shape_err < best_shape)) {
            best_count = count_err;
            best_shape = shape_err;
            std::copy(n, n + 3, cells);
        }
    }
}

std::vector<std::uint32_t> enforce_connectivity(const Dims& d, const std::vector<std::uint32_t>& labels,
                                                int target_size, SlicDiagnostics& diag) {
    const std::size_t n = d.count();
    std::vector<std::uint32_t> comp(n, kUnassigned);
    std::vector<std::uint32_t> comp_label;
    std::vector<std::size_t> comp_size;
    const std::size_t sy = static_cast<std::size_t>(d.x), sz = sy * static_cast<std::size_t>(d.y);
    std::vector<std::size_t> stack;
    auto for_faces = [&](std::size_t i, auto&& f) {
        const VoxelCoord c = coord_of(d, i);
        if (c.x > 0) f(i - 1);
        if (c.x + 1 < d.x) f(i + 1);
        if (c.y > 0) f(i - sy);
        if (c.y + 1 < d.y) f(i + sy);
        if (c.z > 0) f(i - sz);
        if (c.z + 1 < d.z) f(i + sz);
    };
    for (std::size_t s = 0; s < n; ++s) {
        if (comp[s] != kUnassigned) continue;
        const auto id = static_cast<std::uint32_t>(comp_label.size());
        comp_label.push_back(labels[s]);
        std::size_t size = 0;
        comp[s] = id;
        stack.push_back(s);
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            ++size;
            for_faces(i, [&](std::size_t j) {
                if (comp[j] == kUnassigned && labels[j] == labels[i]) {
                    comp[j] = id;
                    stack.push_back(j);
                }
            });
        }
        comp_size.push_back(size);
    }
    const std::size_t nc = comp_label.size();

    // Largest component of each label keeps it; ties go to the first found.
    std::map<std::uint32_t, std::uint32_t> dominant;
    for (std::uint32_t c = 0; c < nc; ++c) {
        auto [it, inserted] = dominant.try_emplace(comp_label[c], c);
        if (!inserted && comp_size[c] > comp_size[it->second]) it->second = c;
    }
    std::vector<char> kept(nc, 0);
    for (const auto& [label, c] : dominant) kept[c] = 1;
    const std::size_t small_limit = static_cast<std::size_t>(target_size) / 4;
    std::vector<char> small(nc, 0);
    for (std::uint32_t c = 0; c < nc; ++c) {
        if (!kept[c] && comp_size[c] < small_limit) small[c] = 1;
    }

    // Shared face counts between each small fragment and its neighbours.
    std::vector<std::map<std::uint32_t, std::size_t>> contact(nc);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t a = comp[i];
        if (!small[a]) continue;
        for_faces(i, [&](std::size_t j) {
            if (comp[j] != a) ++contact[a][comp[j]];
        });
    }
    std::vector<std::uint32_t> parent(nc);
    std::iota(parent.begin(), parent.end(), 0u);
    auto find = [&](std::uint32_t x) {
        while (parent[x] != x) {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        return x;
    };
    for (std::uint32_t c = 0; c < nc; ++c) {
        if (!small[c] || contact[c].empty()) continue;
        // Most-adjacent neighbour, preferring fragments that are not small so
        // that small pieces do not pair up into an extra supervoxel.
        std::uint32_t best = 0;
        std::size_t best_count = 0;
        bool best_large = false;
        for (const auto& [other, count] : contact[c]) {
            const bool large = !small[other];
            if ((large && !best_large) || (large == best_large && count > best_count)) {
                best = other;
                best_count = count;
                best_large = large;
            }
        }
        const std::uint32_t ra = find(c), rb = find(best);
        if (ra == rb) continue;
        // Kept components stay roots so their label survives.
        if (kept[ra] || (!small[ra] && small[rb])) {
            parent[rb] = ra;
        } else {
            parent[ra] = rb;
        }
        ++diag.fragments_absorbed;
    }
    for (std::uint32_t c = 0; c < nc; ++c) {
        if (!kept[c] && !small[c]) ++diag.fragments_promoted;
    }

    // Dense relabel by first raster occurrence of each merged set.
    std::vector<std::uint32_t> final_id(nc, kUnassigned);
    std::vector<std::uint32_t> out(n);
    std::uint32_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint32_t r = find(comp[i]);
        if (final_id[r] == kUnassigned) final_id[r] = next++;
        out[i] = final_id[r];
    }
    return out;
}

std::vector<std::uint32_t> relabel_dense(const std::vector<std::uint32_t>& labels) {
    std::map<std::uint32_t, std::uint32_t> remap;
    std::vector<std::uint32_t> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto [it, inserted] = remap.try_emplace(labels[i], static_cast<std::uint32_t>(remap.size()));
        out[i] = it->second;
    }
    return out;
}

}  // namespace

Oversegmentation generate_supervoxels(const RasterVolume& vol, const SlicParams& params, std::uint64_t /*seed*/,
                                      SlicDiagnostics* diagnostics) {
    const Dims d = vol.dims();
    if (!d.valid() || vol.voxel_count() == 0) throw PreconditionError("zero-extent volume");
    if (params.target_size < 2) throw PreconditionError("target_size must be >= 2");
    if (static_cast<std::size_t>(params.target_size) > d.count()) {
        throw PreconditionError("target_size " + std::to_string(params.target_size) + " exceeds voxel count " +
                                std::to_string(d.count()));
    }
    if (params.max_iterations < 1) throw PreconditionError("max_iterations must be positive");

    SlicDiagnostics local_diag;
    SlicDiagnostics& diag = diagnostics ? *diagnostics : local_diag;
    diag = {};

    const int D = d.dimensionality();
    const int S = grid_step(params.target_size, D);
    const std::size_t n = d.count();

    Field3 lab(n);
    {
        std::map<std::uint32_t, std::array<double, 3>> cache;
        for (std::size_t i = 0; i < n; ++i) {
            const Rgb c = vol.rgb(i);
            const std::uint32_t key = (static_cast<std::uint32_t>(c[0]) << 16) | (c[1] << 8) | c[2];
            auto it = cache.find(key);
            if (it == cache.end()) it = cache.emplace(key, srgb_to_lab(c)).first;
            lab[i] = it->second;
        }
    }

    // Regular grid of initial centers, then gradient perturbation.
    const int dims_arr[3] = {d.x, d.y, d.z};
    int cells[3] = {1, 1, 1};
    initial_grid(d, params.target_size, cells);
    std::vector<Center> centers;
    for (int k = 0; k < cells[2]; ++k) {
        for (int j = 0; j < cells[1]; ++j) {
            for (int i = 0; i < cells[0]; ++i) {
                const int idx[3] = {i, j, k};
                Center c{};
                for (int a = 0; a < 3; ++a) {
                    c.pos[a] = (idx[a] + 0.5) * static_cast<double>(dims_arr[a]) / cells[a] - 0.5;
                }
                int r[3];
                for (int a = 0; a < 3; ++a) {
                    r[a] = std::clamp(static_cast<int>(std::lround(c.pos[a])), 0, dims_arr[a] - 1);
                }
                double best = gradient_at(lab, d, r[0], r[1], r[2]);
                int moved[3] = {r[0], r[1], r[2]};
                bool did_move = false;
                const int zr = D == 3 ? 1 : 0;
                for (int dz = -zr; dz <= zr; ++dz) {
                    for (int dy = -1; dy <= 1; ++dy) {
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int px = r[0] + dx, py = r[1] + dy, pz = r[2] + dz;
                            if (px < 0 || py < 0 || pz < 0 || px >= d.x || py >= d.y || pz >= d.z) continue;
                            const double g = gradient_at(lab, d, px, py, pz);
                            if (g < best) {
                                best = g;
                                moved[0] = px;
                                moved[1] = py;
                                moved[2] = pz;
                                did_move = true;
                            }
                        }
                    }
                }
                if (did_move) {
                    for (int a = 0; a < 3; ++a) c.pos[a] = moved[a];
                }
                c.lab = lab[linear_index(d, moved[0], moved[1], moved[2])];
                centers.push_back(c);
            }
        }
    }
    const std::size_t K = centers.size();
    diag.initial_centers = static_cast<int>(K);

    std::vector<double> compact(K, 10.0);
    std::vector<std::uint32_t> label(n, kUnassigned);
    std::vector<double> dist(n);
    std::vector<double> color_d2(n);
    const double inv_s2 = 1.0 / (static_cast<double>(S) * S);

    auto joint = [&](std::size_t i, const Center& c, std::uint32_t k, int x, int y, int z, double& dc2) {
        dc2 = lab_dist2(lab[i], c.lab);
        const double dx = x - c.pos[0], dy = y - c.pos[1], dz = z - c.pos[2];
        return dc2 / (compact[k] * compact[k]) + (dx * dx + dy * dy + dz * dz) * inv_s2;
    };

    for (int iter = 0; iter < params.max_iterations; ++iter) {
        const CenterIndex index(d, S, centers);
        const std::size_t rows = static_cast<std::size_t>(d.y) * static_cast<std::size_t>(d.z);
        std::vector<double> row_objective(rows, 0.0);
        std::vector<std::size_t> row_changed(rows, 0);
        parallel_for(rows, [&](std::size_t row) {
            const int y = static_cast<int>(row % static_cast<std::size_t>(d.y));
            const int z = static_cast<int>(row / static_cast<std::size_t>(d.y));
            for (int x = 0; x < d.x; ++x) {
                const std::size_t i = linear_index(d, x, y, z);
                const std::uint32_t prev = label[i];
                std::uint32_t best_k = kUnassigned;
                double best = std::numeric_limits<double>::infinity();
                double best_dc2 = 0.0;
                if (prev != kUnassigned) {
                    best = joint(i, centers[prev], prev, x, y, z, best_dc2);
                    best_k = prev;
                }
                index.for_candidates(x, y, z, [&](std::uint32_t k) {
                    const Center& c = centers[k];
                    if (std::abs(x - c.pos[0]) > S || std::abs(y - c.pos[1]) > S || std::abs(z - c.pos[2]) > S) return;
                    double dc2;
                    const double dd = joint(i, c, k, x, y, z, dc2);
                    if (dd < best || (dd == best && k < best_k)) {
                        best = dd;
                        best_k = k;
                        best_dc2 = dc2;
                    }
                });
                if (best_k == kUnassigned) {
                    // Outside every window: fall back to an exhaustive scan.
                    for (std::uint32_t k = 0; k < K; ++k) {
                        double dc2;
                        const double dd = joint(i, centers[k], k, x, y, z, dc2);
                        if (dd < best) {
                            best = dd;
                            best_k = k;
                            best_dc2 = dc2;
                        }
                    }
                }
                if (best_k != prev) ++row_changed[row];
                label[i] = best_k;
                dist[i] = best;
                color_d2[i] = best_dc2;
                row_objective[row] += best;
            }
        });
        diag.objective.push_back(std::accumulate(row_objective.begin(), row_objective.end(), 0.0));
        diag.iterations = iter + 1;
        const std::size_t changed = std::accumulate(row_changed.begin(), row_changed.end(), std::size_t{0});
        if (iter > 0 && changed == 0) break;

        // Update step: centroid in joint (Lab, position) space; compactness
        // is the running maximum of observed color distances.
        std::vector<std::array<double, 7>> acc(K, std::array<double, 7>{});
        std::vector<double> max_dc2(K, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            const std::uint32_t k = label[i];
            const VoxelCoord c = coord_of(d, i);
            auto& a = acc[k];
            a[0] += lab[i][0];
            a[1] += lab[i][1];
            a[2] += lab[i][2];
            a[3] += c.x;
            a[4] += c.y;
            a[5] += c.z;
            a[6] += 1.0;
            max_dc2[k] = std::max(max_dc2[k], color_d2[i]);
        }
        for (std::size_t k = 0; k < K; ++k) {
            const double cnt = acc[k][6];
            if (cnt == 0.0) continue;
            for (int a = 0; a < 3; ++a) {
                centers[k].lab[a] = acc[k][a] / cnt;
                centers[k].pos[a] = acc[k][3 + a] / cnt;
            }
            compact[k] = std::max(compact[k], std::sqrt(max_dc2[k]));
        }
    }

    std::vector<std::uint32_t> dense = params.enforce_connectivity
                                           ? enforce_connectivity(d, label, params.target_size, diag)
                                           : relabel_dense(label);
    return Oversegmentation::from_label_field(vol, std::move(dense), params.target_size);
}

// ---------------------------------------------------------------------------
// Cache file
// ---------------------------------------------------------------------------

std::vector<std::uint8_t> serialize_oversegmentation(const Oversegmentation& seg) {
    ByteWriter w;
    w.magic("SVOX");
    w.u32(kSvoxVersion);
    w.u32(static_cast<std::uint32_t>(seg.dims().x));
    w.u32(static_cast<std::uint32_t>(seg.dims().y));
    w.u32(static_cast<std::uint32_t>(seg.dims().z));
    w.u32(static_cast<std::uint32_t>(seg.target_size()));
    w.u32(static_cast<std::uint32_t>(seg.size()));
    for (const auto& sv : seg.supervoxels()) {
        w.u32(sv.size);
        for (double v : sv.mean_color) w.f64(v);
        for (double v : sv.centroid) w.f64(v);
        w.u32(static_cast<std::uint32_t>(sv.runs.size()));
        for (const auto& r : sv.runs) {
            w.u32(static_cast<std::uint32_t>(r.start.x));
            w.u32(static_cast<std::uint32_t>(r.start.y));
            w.u32(static_cast<std::uint32_t>(r.start.z));
            w.u32(r.length);
        }
    }
    for (const auto& nb : seg.adjacency()) {
        w.u32(static_cast<std::uint32_t>(nb.size()));
        for (auto id : nb) w.u32(id);
    }
    w.seal();
    return w.take();
}

Oversegmentation deserialize_oversegmentation(std::span<const std::uint8_t> bytes) {
    ByteReader r(verify_sealed(bytes, "supervoxel cache"));
    r.expect_magic("SVOX", "supervoxel cache");
    const std::uint32_t version = r.u32();
    if (version != kSvoxVersion) {
        throw FormatError("supervoxel cache: unsupported format version " + std::to_string(version));
    }
    Oversegmentation seg;
    seg.dims_.x = static_cast<int>(r.u32());
    seg.dims_.y = static_cast<int>(r.u32());
    seg.dims_.z = static_cast<int>(r.u32());
    if (!seg.dims_.valid()) throw FormatError("supervoxel cache: invalid dims");
    seg.target_size_ = static_cast<int>(r.u32());
    const std::uint32_t count = r.u32();
    if (count > seg.dims_.count()) throw FormatError("supervoxel cache: more supervoxels than voxels");
    seg.supervoxels_.resize(count);
    seg.label_field_.assign(seg.dims_.count(), kUnassigned);
    std::size_t covered = 0;
    for (std::uint32_t id = 0; id < count; ++id) {
        auto& sv = seg.supervoxels_[id];
        sv.id = id;
        sv.size = r.u32();
        for (double& v : sv.mean_color) v = r.f64();
        for (double& v : sv.centroid) v = r.f64();
        const std::uint32_t nruns = r.u32();
        if (nruns > r.remaining() / 16) throw FormatError("supervoxel cache: truncated run table");
        sv.runs.resize(nruns);
        std::uint64_t total = 0;
        for (auto& run : sv.runs) {
            run.start.x = static_cast<int>(r.u32());
            run.start.y = static_cast<int>(r.u32());
            run.start.z = static_cast<int>(r.u32());
            run.length = r.u32();
            if (!in_bounds(seg.dims_, run.start) || run.length == 0 ||
                static_cast<std::uint64_t>(run.start.x) + run.length > static_cast<std::uint64_t>(seg.dims_.x)) {
                throw FormatError("supervoxel cache: run out of bounds");
            }
            const std::size_t base = linear_index(seg.dims_, run.start);
            for (std::uint32_t k = 0; k < run.length; ++k) {
                if (seg.label_field_[base + k] != kUnassigned) throw FormatError("supervoxel cache: overlapping runs");
                seg.label_field_[base + k] = id;
            }
            total += run.length;
        }
        if (total != sv.size) throw FormatError("supervoxel cache: size does not match run lengths");
        covered += total;
    }
    if (covered != seg.dims_.count()) throw FormatError("supervoxel cache: runs do not cover the volume");
    seg.adjacency_.resize(count);
    for (std::uint32_t id = 0; id < count; ++id) {
        const std::uint32_t m = r.u32();
        if (m > count) throw FormatError("supervoxel cache: invalid adjacency list");
        seg.adjacency_[id].resize(m);
        for (auto& nb : seg.adjacency_[id]) {
            nb = r.u32();
            if (nb >= count) throw FormatError("supervoxel cache: adjacency id out of range");
        }
    }
    if (r.remaining() != 0) throw FormatError("supervoxel cache: trailing bytes");
    return seg;
}

void save_oversegmentation(const Oversegmentation& seg, const std::filesystem::path& path) {
    write_file_atomic(path, serialize_oversegmentation(seg));
}

Oversegmentation load_oversegmentation(const std::filesystem::path& path) {
    return deserialize_oversegmentation(read_file_bytes(path));
}

}  // namespace svseg
