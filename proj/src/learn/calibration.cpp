#include "svseg/learn/calibration.hpp"

#include "svseg/common.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace svseg {

double PlattSigmoid::operator()(double s) const {
    const double f = a * s + b;
    // Evaluate in the numerically safe direction.
    return f >= 0 ? std::exp(-f) / (1.0 + std::exp(-f)) : 1.0 / (1.0 + std::exp(f));
}

PlattSigmoid fit_platt(std::span<const double> scores, std::span<const int> labels) {
    const std::size_t n = scores.size();
    if (n == 0 || labels.size() != n) throw PreconditionError("Platt fit needs equally many scores and labels");
    double prior1 = 0, prior0 = 0;
    for (int y : labels) (y ? prior1 : prior0) += 1;
    const double hi = (prior1 + 1.0) / (prior1 + 2.0);
    const double lo = 1.0 / (prior0 + 2.0);
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = labels[i] ? hi : lo;

    const int max_iter = 100;
    const double min_step = 1e-10, sigma = 1e-12, eps = 1e-5;
    double a = 0.0, b = std::log((prior0 + 1.0) / (prior1 + 1.0));
    auto objective = [&](double aa, double bb) {
        double f = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double fa = scores[i] * aa + bb;
            f += fa >= 0 ? t[i] * fa + std::log1p(std::exp(-fa)) : (t[i] - 1.0) * fa + std::log1p(std::exp(fa));
        }
        return f;
    };
    double fval = objective(a, b);
    for (int it = 0; it < max_iter; ++it) {
        double h11 = sigma, h22 = sigma, h21 = 0.0, g1 = 0.0, g2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double fa = scores[i] * a + b;
            double p, q;
            if (fa >= 0) {
                p = std::exp(-fa) / (1.0 + std::exp(-fa));
                q = 1.0 / (1.0 + std::exp(-fa));
            } else {
                p = 1.0 / (1.0 + std::exp(fa));
                q = std::exp(fa) / (1.0 + std::exp(fa));
            }
            const double d2 = p * q;
            h11 += scores[i] * scores[i] * d2;
            h22 += d2;
            h21 += scores[i] * d2;
            const double d1 = t[i] - p;
            g1 += scores[i] * d1;
            g2 += d1;
        }
        if (std::abs(g1) < eps && std::abs(g2) < eps) break;
        const double det = h11 * h22 - h21 * h21;
        const double da = -(h22 * g1 - h21 * g2) / det;
        const double db = -(-h21 * g1 + h11 * g2) / det;
        const double gd = g1 * da + g2 * db;
        double step = 1.0;
        while (step >= min_step) {
            const double na = a + step * da, nb = b + step * db;
            const double nf = objective(na, nb);
            if (nf < fval + 1e-4 * step * gd) {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if (step < min_step) break;
    }
    return {a, b};
}

double IsotonicStep::operator()(double s) const {
    if (threshold.empty()) return 0.5;
    const auto it = std::upper_bound(threshold.begin(), threshold.end(), s);
    if (it == threshold.begin()) return value.front();
    return value[static_cast<std::size_t>(it - threshold.begin() - 1)];
}

IsotonicStep fit_isotonic(std::span<const double> scores, std::span<const double> targets,
                          std::span<const double> weights) {
    const std::size_t n = scores.size();
    if (n == 0 || targets.size() != n) throw PreconditionError("isotonic fit needs equally many scores and targets");
    if (!weights.empty() && weights.size() != n) throw PreconditionError("isotonic weights length mismatch");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](auto i, auto j) { return scores[i] < scores[j]; });

    struct Block {
        double lo;  // smallest score in the block
        double sum, weight;
    };
    std::vector<Block> blocks;
    for (std::size_t k = 0; k < n; ++k) {
        const auto i = order[k];
        const double w = weights.empty() ? 1.0 : weights[i];
        if (!blocks.empty() && scores[i] == scores[order[k - 1]]) {
            blocks.back().sum += w * targets[i];
            blocks.back().weight += w;
        } else {
            blocks.push_back({scores[i], w * targets[i], w});
        }
        while (blocks.size() > 1) {
            const Block& last = blocks.back();
            const Block& prev = blocks[blocks.size() - 2];
            if (prev.sum / prev.weight <= last.sum / last.weight) break;
            Block merged{prev.lo, prev.sum + last.sum, prev.weight + last.weight};
            blocks.pop_back();
            blocks.back() = merged;
        }
    }
    IsotonicStep f;
    for (const auto& b : blocks) {
        f.threshold.push_back(b.lo);
        f.value.push_back(b.sum / b.weight);
    }
    return f;
}

std::vector<double> isotonic_fitted(const IsotonicStep& f, std::span<const double> scores) {
    std::vector<double> out(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) out[i] = f(scores[i]);
    return out;
}

double balanced_accuracy(std::span<const int> truth, std::span<const int> predicted) {
    if (truth.empty() || truth.size() != predicted.size()) {
        throw PreconditionError("balanced accuracy needs equally many non-empty truth and prediction labels");
    }
    double hit[2] = {0, 0}, total[2] = {0, 0};
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const auto c = static_cast<std::size_t>(truth[i]);
        total[c] += 1;
        if (predicted[i] == truth[i]) hit[c] += 1;
    }
    double s = 0;
    int classes = 0;
    for (int c = 0; c < 2; ++c) {
        if (total[c] > 0) {
            s += hit[c] / total[c];
            ++classes;
        }
    }
    return s / classes;
}

double brier_score(std::span<const int> truth, std::span<const double> probability) {
    if (truth.empty() || truth.size() != probability.size()) {
        throw PreconditionError("Brier score needs equally many non-empty labels and probabilities");
    }
    double s = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = probability[i] - truth[i];
        s += d * d;
    }
    return s / static_cast<double>(truth.size());
}

ConfusionCounts confusion(std::span<const int> truth, std::span<const int> predicted) {
    ConfusionCounts c;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i]) (predicted[i] ? c.tp : c.fn)++;
        else (predicted[i] ? c.fp : c.tn)++;
    }
    return c;
}

}  // namespace svseg
