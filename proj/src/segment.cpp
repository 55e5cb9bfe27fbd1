#include "svseg/segment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

namespace svseg {

void SegmentationParams::validate() const {
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw PreconditionError("threshold must lie in [0, 1]");
    if (smooth_radius < 0) throw PreconditionError("smoothing radius must be non-negative");
    if (!(watershed_h > 0.0)) throw PreconditionError("watershed depth must be positive");
}

std::size_t supervoxel_multiple(const Oversegmentation& seg, double count) {
    if (count < 0) throw PreconditionError("supervoxel multiple must be non-negative");
    return static_cast<std::size_t>(std::llround(count * seg.target_size()));
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Calls f(neighbour index) for each in-image face neighbour of voxel i.
template <class F>
void for_each_face_neighbor(const Dims& d, std::size_t i, F&& f) {
    const auto c = coord_of(d, i);
    const std::size_t sx = 1, sy = static_cast<std::size_t>(d.x), sz = sy * static_cast<std::size_t>(d.y);
    if (c.x > 0) f(i - sx);
    if (c.x + 1 < d.x) f(i + sx);
    if (c.y > 0) f(i - sy);
    if (c.y + 1 < d.y) f(i + sy);
    if (c.z > 0) f(i - sz);
    if (c.z + 1 < d.z) f(i + sz);
}

bool on_border(const Dims& d, std::size_t i) {
    const auto c = coord_of(d, i);
    if (c.x == 0 || c.x + 1 == d.x || c.y == 0 || c.y + 1 == d.y) return true;
    return d.z > 1 && (c.z == 0 || c.z + 1 == d.z);
}

struct UnionFind {
    std::vector<std::uint32_t> parent;
    explicit UnionFind(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0u); }
    std::uint32_t find(std::uint32_t a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    }
    void unite(std::uint32_t a, std::uint32_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        if (a < b) parent[b] = a;
        else parent[a] = b;
    }
};

/// Labels the voxels whose value equals `value` (true: foreground).
LabelImage label_value(const BinaryMask& mask, bool value) {
    const Dims d = mask.dims;
    const std::size_t n = d.count();
    UnionFind uf(n);
    const std::size_t sy = static_cast<std::size_t>(d.x), sz = sy * static_cast<std::size_t>(d.y);
    for (std::size_t i = 0; i < n; ++i) {
        if (mask[i] != value) continue;
        const auto c = coord_of(d, i);
        if (c.x > 0 && mask[i - 1] == value) uf.unite(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i - 1));
        if (c.y > 0 && mask[i - sy] == value) uf.unite(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i - sy));
        if (c.z > 0 && mask[i - sz] == value) uf.unite(static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(i - sz));
    }
    LabelImage out(d);
    std::vector<std::uint32_t> root_label(n, 0);
    std::uint32_t next = 1;
    for (std::size_t i = 0; i < n; ++i) {
        if (mask[i] != value) continue;
        const auto r = uf.find(static_cast<std::uint32_t>(i));
        if (root_label[r] == 0) root_label[r] = next++;
        out.labels[i] = root_label[r];
    }
    return out;
}

std::vector<std::size_t> component_sizes(const LabelImage& lab) {
    std::vector<std::size_t> size(lab.max_label() + 1, 0);
    for (auto l : lab.labels) size[l]++;
    return size;
}

/// 1D lower envelope transform of sampled squared distances (sites with
/// infinite f are skipped).
void distance_1d(const double* f, double* out, std::size_t n, std::size_t stride, std::vector<double>& vals,
                 std::vector<int>& v, std::vector<double>& z) {
    vals.resize(n);
    for (std::size_t q = 0; q < n; ++q) vals[q] = f[q * stride];
    v.resize(n);
    z.resize(n + 1);
    int k = -1;
    for (int q = 0; q < static_cast<int>(n); ++q) {
        if (vals[static_cast<std::size_t>(q)] == kInf) continue;
        const double fq = vals[static_cast<std::size_t>(q)] + static_cast<double>(q) * q;
        while (k >= 0) {
            const int p = v[static_cast<std::size_t>(k)];
            const double s = (fq - (vals[static_cast<std::size_t>(p)] + static_cast<double>(p) * p)) / (2.0 * (q - p));
            if (s <= z[static_cast<std::size_t>(k)]) {
                --k;
                continue;
            }
            ++k;
            v[static_cast<std::size_t>(k)] = q;
            z[static_cast<std::size_t>(k)] = s;
            break;
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -kInf;
        }
        z[static_cast<std::size_t>(k) + 1] = kInf;
    }
    if (k < 0) {
        for (std::size_t q = 0; q < n; ++q) out[q * stride] = kInf;
        return;
    }
    int j = 0;
    for (int q = 0; q < static_cast<int>(n); ++q) {
        while (z[static_cast<std::size_t>(j) + 1] < q) ++j;
        const int p = v[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(q) * stride] =
            static_cast<double>(q - p) * (q - p) + vals[static_cast<std::size_t>(p)];
    }
}

BinaryMask invert(const BinaryMask& m) {
    BinaryMask out(m.dims);
    for (std::size_t i = 0; i < m.values.size(); ++i) out.values[i] = m.values[i] ? 0 : 1;
    return out;
}

}  // namespace

BinaryMask threshold_to_mask(const ProbabilityMap& prob, const Oversegmentation& seg, double threshold) {
    if (prob.size() != seg.size()) {
        throw DimensionMismatchError("probability map has " + std::to_string(prob.size()) + " entries but the segmentation has " +
                                     std::to_string(seg.size()) + " supervoxels");
    }
    BinaryMask m(seg.dims());
    const auto& field = seg.label_field();
    std::vector<std::uint8_t> fg(prob.size());
    for (std::size_t s = 0; s < prob.size(); ++s) fg[s] = prob.p[s] >= threshold ? 1 : 0;
    for (std::size_t i = 0; i < field.size(); ++i) m.values[i] = fg[field[i]];
    return m;
}

LabelImage label_components(const BinaryMask& mask) { return label_value(mask, true); }

BinaryMask remove_small_objects(const BinaryMask& mask, std::size_t min_size) {
    if (min_size == 0) return mask;
    const auto lab = label_components(mask);
    const auto size = component_sizes(lab);
    BinaryMask out(mask.dims);
    for (std::size_t i = 0; i < lab.labels.size(); ++i) {
        const auto l = lab.labels[i];
        out.values[i] = (l != 0 && size[l] >= min_size) ? 1 : 0;
    }
    return out;
}

BinaryMask fill_small_holes(const BinaryMask& mask, std::size_t max_hole) {
    if (max_hole == 0) return mask;
    const auto lab = label_value(mask, false);
    const auto size = component_sizes(lab);
    std::vector<bool> touches(size.size(), false);
    for (std::size_t i = 0; i < lab.labels.size(); ++i)
        if (lab.labels[i] && on_border(mask.dims, i)) touches[lab.labels[i]] = true;
    BinaryMask out = mask;
    for (std::size_t i = 0; i < lab.labels.size(); ++i) {
        const auto l = lab.labels[i];
        if (l && !touches[l] && size[l] < max_hole) out.values[i] = 1;
    }
    return out;
}

std::vector<double> squared_distance_to(const BinaryMask& mask, bool target) {
    const Dims d = mask.dims;
    const std::size_t n = d.count();
    std::vector<double> f(n);
    for (std::size_t i = 0; i < n; ++i) f[i] = mask[i] == target ? 0.0 : kInf;
    const std::size_t nx = static_cast<std::size_t>(d.x), ny = static_cast<std::size_t>(d.y),
                      nz = static_cast<std::size_t>(d.z);
    std::vector<double> g(n);
    auto pass = [&](std::size_t lines, std::size_t len, std::size_t stride, auto&& start_of) {
        const std::size_t chunk = 64;
        parallel_for((lines + chunk - 1) / chunk, [&](std::size_t c) {
            std::vector<double> vals, z;
            std::vector<int> v;
            for (std::size_t l = c * chunk; l < std::min(lines, (c + 1) * chunk); ++l) {
                const std::size_t s = start_of(l);
                distance_1d(f.data() + s, g.data() + s, len, stride, vals, v, z);
            }
        });
        f.swap(g);
    };
    pass(ny * nz, nx, 1, [&](std::size_t l) { return l * nx; });
    pass(nx * nz, ny, nx, [&](std::size_t l) { return (l / nx) * nx * ny + l % nx; });
    if (nz > 1) pass(nx * ny, nz, nx * ny, [&](std::size_t l) { return l; });
    return f;
}

BinaryMask dilate(const BinaryMask& mask, int radius) {
    if (radius <= 0) return mask;
    const auto dist = squared_distance_to(mask, true);
    const double r2 = static_cast<double>(radius) * radius;
    BinaryMask out(mask.dims);
    for (std::size_t i = 0; i < dist.size(); ++i) out.values[i] = dist[i] <= r2 ? 1 : 0;
    return out;
}

BinaryMask erode(const BinaryMask& mask, int radius) {
    if (radius <= 0) return mask;
    return invert(dilate(invert(mask), radius));
}

BinaryMask morphological_smooth(const BinaryMask& mask, int radius, SmoothDiagnostics* diag) {
    if (radius < 0) throw PreconditionError("smoothing radius must be non-negative");
    SmoothDiagnostics local;
    if (radius == 0) {
        if (diag) *diag = local;
        return mask;
    }
    const BinaryMask smoothed = dilate(erode(erode(dilate(mask, radius), radius), radius), radius);
    const auto in_lab = label_components(mask);
    const std::uint32_t n_in = in_lab.max_label();
    BinaryMask cur = smoothed;

    // Each round reverts every offending component region to the input; a
    // round can only grow the reverted set, so the loop terminates.
    for (int round = 0; round < 64; ++round) {
        const auto out_lab = label_components(cur);
        const std::uint32_t n_out = out_lab.max_label();
        std::vector<std::vector<std::uint32_t>> in_to_out(n_in + 1), out_to_in(n_out + 1);
        for (std::size_t i = 0; i < cur.values.size(); ++i) {
            const auto a = in_lab.labels[i], b = out_lab.labels[i];
            if (a && b) {
                in_to_out[a].push_back(b);
                out_to_in[b].push_back(a);
            }
        }
        auto dedupe = [](std::vector<std::uint32_t>& v) {
            std::sort(v.begin(), v.end());
            v.erase(std::unique(v.begin(), v.end()), v.end());
        };
        std::vector<bool> revert_in(n_in + 1, false), revert_out(n_out + 1, false);
        for (std::uint32_t b = 1; b <= n_out; ++b) {
            dedupe(out_to_in[b]);
            if (out_to_in[b].size() != 1) {  // merge or newborn
                revert_out[b] = true;
                for (auto a : out_to_in[b]) revert_in[a] = true;
            }
        }
        for (std::uint32_t a = 1; a <= n_in; ++a) {
            dedupe(in_to_out[a]);
            if (in_to_out[a].size() != 1) {  // split or vanished
                revert_in[a] = true;
                for (auto b : in_to_out[a]) revert_out[b] = true;
            }
        }
        std::size_t offending = 0;
        for (std::uint32_t a = 1; a <= n_in; ++a) offending += revert_in[a];
        for (std::uint32_t b = 1; b <= n_out; ++b) offending += revert_out[b] && out_to_in[b].empty();
        if (offending == 0) {
            if (diag) *diag = local;
            return cur;
        }
        local.reverted_components += offending;
        for (std::size_t i = 0; i < cur.values.size(); ++i) {
            if (revert_in[in_lab.labels[i]] && in_lab.labels[i]) cur.values[i] = mask.values[i];
            if (out_lab.labels[i] && revert_out[out_lab.labels[i]]) cur.values[i] = mask.values[i];
        }
    }
    local.fell_back_to_input = true;
    if (diag) *diag = local;
    return mask;
}

LabelImage watershed_split(const BinaryMask& mask, double h) {
    if (!(h > 0.0)) throw PreconditionError("watershed depth must be positive");
    const Dims d = mask.dims;
    const std::size_t n = d.count();
    LabelImage out(d);
    if (mask.count() == 0) return out;

    // Distance to background where the outside of the image counts as
    // background; padding by one voxel realizes that.
    const int pad_z = d.z > 1 ? 1 : 0;
    const Dims pd{d.x + 2, d.y + 2, d.z + 2 * pad_z};
    BinaryMask padded(pd);
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x)
                padded.values[linear_index(pd, x + 1, y + 1, z + pad_z)] = mask.values[linear_index(d, x, y, z)];
    const auto pdist = squared_distance_to(padded, false);
    std::vector<double> dist(n, 0.0);
    for (int z = 0; z < d.z; ++z)
        for (int y = 0; y < d.y; ++y)
            for (int x = 0; x < d.x; ++x)
                dist[linear_index(d, x, y, z)] = std::sqrt(pdist[linear_index(pd, x + 1, y + 1, z + pad_z)]);

    // h-maxima: reconstruction by dilation of (dist - h) under dist.
    std::vector<double> rec(n, 0.0);
    using Item = std::pair<double, std::size_t>;
    {
        std::priority_queue<Item> heap;
        for (std::size_t i = 0; i < n; ++i) {
            if (!mask[i]) continue;
            rec[i] = std::max(0.0, dist[i] - h);
            heap.push({rec[i], i});
        }
        while (!heap.empty()) {
            const auto [v, i] = heap.top();
            heap.pop();
            if (v < rec[i]) continue;
            for_each_face_neighbor(d, i, [&](std::size_t j) {
                if (!mask[j]) return;
                const double cand = std::min(v, dist[j]);
                if (cand > rec[j]) {
                    rec[j] = cand;
                    heap.push({cand, j});
                }
            });
        }
    }

    // Seeds: regional maxima plateaus of the reconstruction.
    std::vector<std::uint32_t> seed(n, 0);
    std::vector<char> visited(n, 0);
    std::uint32_t n_seeds = 0;
    std::vector<std::size_t> plateau, stack;
    for (std::size_t i = 0; i < n; ++i) {
        if (!mask[i] || visited[i]) continue;
        plateau.clear();
        stack.assign(1, i);
        visited[i] = 1;
        bool is_max = true;
        while (!stack.empty()) {
            const auto p = stack.back();
            stack.pop_back();
            plateau.push_back(p);
            for_each_face_neighbor(d, p, [&](std::size_t q) {
                if (!mask[q]) return;
                if (rec[q] > rec[p]) is_max = false;
                else if (rec[q] == rec[p] && !visited[q]) {
                    visited[q] = 1;
                    stack.push_back(q);
                }
            });
        }
        if (is_max) {
            ++n_seeds;
            for (auto p : plateau) seed[p] = n_seeds;
        }
    }

    // Flood the negated distance from the seeds, highest distance first;
    // ties resolve in insertion order.
    struct Entry {
        double key;
        std::uint64_t order;
        std::size_t voxel;
        bool operator<(const Entry& o) const { return key != o.key ? key < o.key : order > o.order; }
    };
    std::priority_queue<Entry> queue;
    std::uint64_t order = 0;
    std::vector<char> queued(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
        if (!seed[i]) continue;
        out.labels[i] = seed[i];
        queued[i] = 1;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!seed[i]) continue;
        for_each_face_neighbor(d, i, [&](std::size_t j) {
            if (mask[j] && !queued[j]) {
                queued[j] = 1;
                queue.push({dist[j], order++, j});
            }
        });
    }
    while (!queue.empty()) {
        const auto e = queue.top();
        queue.pop();
        std::uint32_t label = 0;
        for_each_face_neighbor(d, e.voxel, [&](std::size_t j) {
            if (!label && out.labels[j]) label = out.labels[j];
        });
        out.labels[e.voxel] = label;
        for_each_face_neighbor(d, e.voxel, [&](std::size_t j) {
            if (mask[j] && !queued[j]) {
                queued[j] = 1;
                queue.push({dist[j], order++, j});
            }
        });
    }
    out.relabel_contiguous();
    return out;
}

LabelImage postprocess(const BinaryMask& mask, const SegmentationParams& params) {
    params.validate();
    BinaryMask m = remove_small_objects(mask, params.min_object_size);
    m = fill_small_holes(m, params.max_hole_size);
    m = morphological_smooth(m, params.smooth_radius);
    return params.watershed ? watershed_split(m, params.watershed_h) : label_components(m);
}

LabelImage run_pipeline(const ProbabilityMap& prob, const Oversegmentation& seg, const SegmentationParams& params) {
    params.validate();
    return postprocess(threshold_to_mask(prob, seg, params.threshold), params);
}

std::size_t boundary_voxel_count(const BinaryMask& mask) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < mask.values.size(); ++i) {
        if (!mask[i]) continue;
        bool edge = false;
        for_each_face_neighbor(mask.dims, i, [&](std::size_t j) { edge = edge || !mask[j]; });
        count += edge;
    }
    return count;
}

}  // namespace svseg
