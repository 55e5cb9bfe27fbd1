#pragma once
// Class-weighted random forest of binary Gini trees on bootstrap samples.

#include "svseg/learn/dataset.hpp"

#include <cstdint>
#include <vector>

namespace svseg {

struct ForestParams {
    int n_trees = 200;
    /// 0 means unbounded.
    int max_depth = 0;
    int min_leaf = 1;
    /// Fraction of features examined per split; 0 selects floor(sqrt(d)).
    double feature_fraction = 0.0;

    bool operator==(const ForestParams&) const = default;
};

int features_per_split(const ForestParams& p, std::size_t n_features);

struct DecisionTree {
    /// Parallel node arrays; feature < 0 marks a leaf.
    std::vector<int> feature;
    std::vector<double> threshold;
    std::vector<int> left;
    std::vector<int> right;
    /// Weighted foreground fraction at the node (leaf class distribution is
    /// (1 - value, value)).
    std::vector<double> value;

    double predict(std::span<const double> x) const;
    std::size_t node_count() const { return feature.size(); }
    int depth() const;
    bool operator==(const DecisionTree&) const = default;
};

struct RandomForest {
    ForestParams params;
    std::vector<DecisionTree> trees;

    /// Mean of the trees' leaf foreground fractions.
    double predict(std::span<const double> x) const;
    bool operator==(const RandomForest&) const = default;
};

/// Fits with per-row weights w[y] (see class_weights) on bootstrap samples.
/// Tree t draws from a seed derived from (seed, t).
RandomForest fit_forest(const Samples& data, const ForestParams& params, const std::array<double, 2>& weights,
                        std::uint64_t seed);

/// Grows one tree on the given row multiplicities (bootstrap counts).
DecisionTree grow_tree(const Samples& data, const std::vector<double>& row_weight, const ForestParams& params,
                       std::uint64_t seed);

}  // namespace svseg
