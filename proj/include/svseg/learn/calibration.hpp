#pragma once
// Score-to-probability calibrators and evaluation metrics.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace svseg {

/// p = 1 / (1 + exp(a * s + b)).
struct PlattSigmoid {
    double a = 0.0;
    double b = 0.0;

    double operator()(double s) const;
    bool operator==(const PlattSigmoid&) const = default;
};

/// Penalized maximum likelihood with smoothed targets (N+ + 1)/(N+ + 2) and
/// 1/(N- + 2), solved by Newton's method with backtracking.
PlattSigmoid fit_platt(std::span<const double> scores, std::span<const int> labels);

/// Non-decreasing step function: value[k] applies from threshold[k] up to the
/// next threshold; scores below threshold[0] map to value[0].
struct IsotonicStep {
    std::vector<double> threshold;
    std::vector<double> value;

    double operator()(double s) const;
    bool operator==(const IsotonicStep&) const = default;
};

/// Pool-adjacent-violators on score-sorted targets. Equal scores are pooled
/// first so the fit is a function of the score.
IsotonicStep fit_isotonic(std::span<const double> scores, std::span<const double> targets,
                          std::span<const double> weights = {});

/// Fitted values at each input in the original order.
std::vector<double> isotonic_fitted(const IsotonicStep& f, std::span<const double> scores);

double balanced_accuracy(std::span<const int> truth, std::span<const int> predicted);
double brier_score(std::span<const int> truth, std::span<const double> probability);

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
    bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(std::span<const int> truth, std::span<const int> predicted);

}  // namespace svseg
