#include "svseg/learn/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace svseg {

int features_per_split(const ForestParams& p, std::size_t n_features) {
    const double d = static_cast<double>(n_features);
    const double m = p.feature_fraction > 0.0 ? std::floor(p.feature_fraction * d) : std::floor(std::sqrt(d));
    return static_cast<int>(std::clamp(m, 1.0, d));
}

double DecisionTree::predict(std::span<const double> x) const {
    int node = 0;
    while (feature[static_cast<std::size_t>(node)] >= 0) {
        const auto n = static_cast<std::size_t>(node);
        node = x[static_cast<std::size_t>(feature[n])] <= threshold[n] ? left[n] : right[n];
    }
    return value[static_cast<std::size_t>(node)];
}

int DecisionTree::depth() const {
    if (feature.empty()) return 0;
    std::vector<int> d(feature.size(), 0);
    int best = 0;
    // Children always have larger indices than their parent.
    for (std::size_t n = 0; n < feature.size(); ++n) {
        best = std::max(best, d[n]);
        if (feature[n] >= 0) {
            d[static_cast<std::size_t>(left[n])] = d[n] + 1;
            d[static_cast<std::size_t>(right[n])] = d[n] + 1;
        }
    }
    return best;
}

double RandomForest::predict(std::span<const double> x) const {
    double s = 0.0;
    for (const auto& t : trees) s += t.predict(x);
    return trees.empty() ? 0.5 : s / static_cast<double>(trees.size());
}

namespace {

struct NodeTask {
    std::size_t begin, end;  // range in the row order array
    int node;
    int depth;
};

double gini(double w0, double w1) {
    const double w = w0 + w1;
    if (w <= 0.0) return 0.0;
    const double p0 = w0 / w, p1 = w1 / w;
    return 1.0 - p0 * p0 - p1 * p1;
}

}  // namespace

DecisionTree grow_tree(const Samples& data, const std::vector<double>& row_weight, const ForestParams& params,
                       std::uint64_t seed) {
    const std::size_t d = data.x.cols;
    const int m = features_per_split(params, d);
    Rng rng(seed);
    DecisionTree tree;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (row_weight[i] > 0.0) rows.push_back(i);

    auto add_node = [&] {
        tree.feature.push_back(-1);
        tree.threshold.push_back(0.0);
        tree.left.push_back(-1);
        tree.right.push_back(-1);
        tree.value.push_back(0.0);
        return static_cast<int>(tree.feature.size() - 1);
    };

    std::vector<NodeTask> stack;
    stack.push_back({0, rows.size(), add_node(), 0});
    std::vector<std::size_t> features(d);
    std::vector<std::pair<double, std::size_t>> sorted;
    const auto min_leaf = static_cast<std::size_t>(std::max(1, params.min_leaf));

    while (!stack.empty()) {
        const NodeTask task = stack.back();
        stack.pop_back();
        const auto node = static_cast<std::size_t>(task.node);
        double w0 = 0.0, w1 = 0.0;
        for (std::size_t k = task.begin; k < task.end; ++k) {
            const auto r = rows[k];
            (data.y[r] ? w1 : w0) += row_weight[r];
        }
        tree.value[node] = (w0 + w1) > 0.0 ? w1 / (w0 + w1) : 0.5;
        const std::size_t count = task.end - task.begin;
        const bool pure = w0 == 0.0 || w1 == 0.0;
        if (pure || count < 2 * min_leaf || (params.max_depth > 0 && task.depth >= params.max_depth)) continue;

        std::iota(features.begin(), features.end(), std::size_t{0});
        double best_impurity = std::numeric_limits<double>::infinity();
        int best_feature = -1;
        double best_threshold = 0.0;
        // Draw features without replacement; keep drawing past m until a
        // valid split is found or every feature has been tried.
        for (std::size_t drawn = 0; drawn < d; ++drawn) {
            if (static_cast<int>(drawn) >= m && best_feature >= 0) break;
            const std::size_t pick = drawn + rng.uniform_index(d - drawn);
            std::swap(features[drawn], features[pick]);
            const std::size_t f = features[drawn];

            sorted.clear();
            for (std::size_t k = task.begin; k < task.end; ++k) sorted.emplace_back(data.x.at(rows[k], f), rows[k]);
            std::sort(sorted.begin(), sorted.end());
            if (sorted.front().first == sorted.back().first) continue;
            double l0 = 0.0, l1 = 0.0;
            for (std::size_t k = 0; k + 1 < sorted.size(); ++k) {
                const auto r = sorted[k].second;
                (data.y[r] ? l1 : l0) += row_weight[r];
                const std::size_t left_count = k + 1;
                if (left_count < min_leaf || sorted.size() - left_count < min_leaf) continue;
                const double a = sorted[k].first, b = sorted[k + 1].first;
                if (!(a < b)) continue;
                const double r0 = w0 - l0, r1 = w1 - l1;
                const double impurity = (l0 + l1) * gini(l0, l1) + (r0 + r1) * gini(r0, r1);
                if (impurity < best_impurity) {
                    best_impurity = impurity;
                    best_feature = static_cast<int>(f);
                    double t = 0.5 * (a + b);
                    if (!(t < b)) t = a;
                    best_threshold = t;
                }
            }
        }
        if (best_feature < 0) continue;

        const auto mid = std::partition(rows.begin() + static_cast<std::ptrdiff_t>(task.begin),
                                        rows.begin() + static_cast<std::ptrdiff_t>(task.end), [&](std::size_t r) {
                                            return data.x.at(r, static_cast<std::size_t>(best_feature)) <= best_threshold;
                                        });
        // Keep the order within children deterministic regardless of partition details.
        const auto split = static_cast<std::size_t>(mid - rows.begin());
        std::sort(rows.begin() + static_cast<std::ptrdiff_t>(task.begin), mid);
        std::sort(mid, rows.begin() + static_cast<std::ptrdiff_t>(task.end));

        tree.feature[node] = best_feature;
        tree.threshold[node] = best_threshold;
        const int l = add_node();
        const int r = add_node();
        tree.left[node] = l;
        tree.right[node] = r;
        stack.push_back({split, task.end, r, task.depth + 1});
        stack.push_back({task.begin, split, l, task.depth + 1});
    }
    return tree;
}

RandomForest fit_forest(const Samples& data, const ForestParams& params, const std::array<double, 2>& weights,
                        std::uint64_t seed) {
    if (data.size() == 0) throw PreconditionError("cannot fit a forest on zero rows");
    if (params.n_trees < 1) throw PreconditionError("forest needs at least one tree");
    require_finite(data.x);
    RandomForest forest;
    forest.params = params;
    forest.trees.resize(static_cast<std::size_t>(params.n_trees));
    const std::size_t n = data.size();
    parallel_for(forest.trees.size(), [&](std::size_t t) {
        const std::uint64_t tree_seed = derive_seed(seed, 0x7EE, t);
        Rng rng(derive_seed(tree_seed, 1));
        std::vector<double> w(n, 0.0);
        for (std::size_t k = 0; k < n; ++k) w[rng.uniform_index(n)] += 1.0;
        for (std::size_t i = 0; i < n; ++i) w[i] *= weights[static_cast<std::size_t>(data.y[i])];
        forest.trees[t] = grow_tree(data, w, params, derive_seed(tree_seed, 2));
    });
    return forest;
}

}  // namespace svseg
