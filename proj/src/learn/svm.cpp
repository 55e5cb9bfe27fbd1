#include "svseg/learn/svm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <list>
#include <unordered_map>

namespace svseg {

double resolved_gamma(const SvmParams& p, std::size_t n_features) {
    return p.gamma > 0.0 ? p.gamma : 1.0 / static_cast<double>(std::max<std::size_t>(1, n_features));
}

double rbf_kernel(std::span<const double> a, std::span<const double> b, double gamma) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        s += d * d;
    }
    return std::exp(-gamma * s);
}

double SvmModel::decision(std::span<const double> x) const {
    double s = 0.0;
    for (std::size_t i = 0; i < coef.size(); ++i) s += coef[i] * rbf_kernel(support_vectors.row(i), x, gamma);
    return s - bias;
}

namespace {

/// Rows of Q on demand with a bounded LRU cache.
class QMatrix {
public:
    QMatrix(const Matrix& x, std::span<const int> y, double gamma) : x_(x), y_(y), gamma_(gamma) {
        const std::size_t n = x.rows;
        diag_.resize(n);
        for (std::size_t i = 0; i < n; ++i) diag_[i] = 1.0;  // K(x, x) = 1 for RBF
        const std::size_t budget = std::size_t{256} << 20;
        capacity_ = std::max<std::size_t>(2, budget / std::max<std::size_t>(1, n * sizeof(double)));
    }

    const std::vector<double>& row(std::size_t i) {
        auto it = cache_.find(i);
        if (it != cache_.end()) {
            lru_.splice(lru_.begin(), lru_, it->second.second);
            return it->second.first;
        }
        if (cache_.size() >= capacity_) {
            cache_.erase(lru_.back());
            lru_.pop_back();
        }
        const std::size_t n = x_.rows;
        std::vector<double> r(n);
        const double yi = y_[i] ? 1.0 : -1.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double yj = y_[j] ? 1.0 : -1.0;
            r[j] = yi * yj * rbf_kernel(x_.row(i), x_.row(j), gamma_);
        }
        lru_.push_front(i);
        auto [pos, ok] = cache_.emplace(i, std::make_pair(std::move(r), lru_.begin()));
        return pos->second.first;
    }

    double diag(std::size_t i) const { return diag_[i]; }

private:
    const Matrix& x_;
    std::span<const int> y_;
    double gamma_;
    std::vector<double> diag_;
    std::size_t capacity_;
    std::list<std::size_t> lru_;
    std::unordered_map<std::size_t, std::pair<std::vector<double>, std::list<std::size_t>::iterator>> cache_;
};

constexpr double kTau = 1e-12;

}  // namespace

SvmSolution solve_svm_dual(const Matrix& x, std::span<const int> labels, std::span<const double> upper, double gamma,
                           double tolerance, long max_iterations) {
    const std::size_t n = x.rows;
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = labels[i] ? 1.0 : -1.0;
    QMatrix q(x, labels, gamma);
    SvmSolution sol;
    sol.alpha.assign(n, 0.0);
    std::vector<double> grad(n, -1.0);
    auto& a = sol.alpha;

    auto in_up = [&](std::size_t t) { return (y[t] > 0 && a[t] < upper[t]) || (y[t] < 0 && a[t] > 0); };
    auto in_low = [&](std::size_t t) { return (y[t] > 0 && a[t] > 0) || (y[t] < 0 && a[t] < upper[t]); };

    for (sol.iterations = 0; sol.iterations < max_iterations; ++sol.iterations) {
        // Working set selection (maximal violating first index, second-order second index).
        double gmax = -std::numeric_limits<double>::infinity();
        std::size_t i = n;
        for (std::size_t t = 0; t < n; ++t) {
            if (in_up(t) && -y[t] * grad[t] > gmax) {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        if (i == n) {
            sol.converged = true;
            break;
        }
        const auto& qi = q.row(i);
        double gmin = std::numeric_limits<double>::infinity();
        double best_obj = std::numeric_limits<double>::infinity();
        std::size_t j = n;
        for (std::size_t t = 0; t < n; ++t) {
            if (!in_low(t)) continue;
            const double v = -y[t] * grad[t];
            gmin = std::min(gmin, v);
            const double b = gmax - v;
            if (b > 0) {
                double curv = q.diag(i) + q.diag(t) - 2.0 * y[i] * y[t] * qi[t];
                if (curv <= 0) curv = kTau;
                const double obj = -(b * b) / curv;
                if (obj < best_obj) {
                    best_obj = obj;
                    j = t;
                }
            }
        }
        if (gmax - gmin < tolerance || j == n) {
            sol.converged = true;
            break;
        }
        // Copies: fetching one row may evict the other from the cache.
        const std::vector<double> qi_copy = qi;
        const std::vector<double> qj = q.row(j);
        const double ci = upper[i], cj = upper[j];
        const double old_ai = a[i], old_aj = a[j];
        if (y[i] != y[j]) {
            double quad = q.diag(i) + q.diag(j) + 2.0 * qi_copy[j];
            if (quad <= 0) quad = kTau;
            const double delta = (-grad[i] - grad[j]) / quad;
            const double diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if (diff > 0) {
                if (a[j] < 0) {
                    a[j] = 0;
                    a[i] = diff;
                }
            } else if (a[i] < 0) {
                a[i] = 0;
                a[j] = -diff;
            }
            if (diff > ci - cj) {
                if (a[i] > ci) {
                    a[i] = ci;
                    a[j] = ci - diff;
                }
            } else if (a[j] > cj) {
                a[j] = cj;
                a[i] = cj + diff;
            }
        } else {
            double quad = q.diag(i) + q.diag(j) - 2.0 * qi_copy[j];
            if (quad <= 0) quad = kTau;
            const double delta = (grad[i] - grad[j]) / quad;
            const double sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if (sum > ci) {
                if (a[i] > ci) {
                    a[i] = ci;
                    a[j] = sum - ci;
                }
            } else if (a[j] < 0) {
                a[j] = 0;
                a[i] = sum;
            }
            if (sum > cj) {
                if (a[j] > cj) {
                    a[j] = cj;
                    a[i] = sum - cj;
                }
            } else if (a[i] < 0) {
                a[i] = 0;
                a[j] = sum;
            }
        }
        const double dai = a[i] - old_ai, daj = a[j] - old_aj;
        for (std::size_t t = 0; t < n; ++t) grad[t] += qi_copy[t] * dai + qj[t] * daj;
    }

    // Bias from free variables, else the midpoint of the feasible interval.
    double ub = std::numeric_limits<double>::infinity(), lb = -ub, sum_free = 0.0;
    std::size_t n_free = 0;
    for (std::size_t t = 0; t < n; ++t) {
        const double yg = y[t] * grad[t];
        if (a[t] >= upper[t]) {
            if (y[t] < 0) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else if (a[t] <= 0) {
            if (y[t] > 0) ub = std::min(ub, yg);
            else lb = std::max(lb, yg);
        } else {
            ++n_free;
            sum_free += yg;
        }
    }
    sol.rho = n_free > 0 ? sum_free / static_cast<double>(n_free) : 0.5 * (ub + lb);
    return sol;
}

SvmModel fit_svm(const Samples& data, const SvmParams& params, const std::array<double, 2>& weights) {
    if (data.size() == 0) throw PreconditionError("cannot fit an SVM on zero rows");
    if (!(params.c > 0.0)) throw PreconditionError("SVM C must be positive");
    require_finite(data.x);
    require_both_classes(data.class_counts());
    SvmModel m;
    m.params = params;
    m.gamma = resolved_gamma(params, data.x.cols);
    std::vector<double> upper(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) upper[i] = params.c * weights[static_cast<std::size_t>(data.y[i])];
    const auto sol = solve_svm_dual(data.x, data.y, upper, m.gamma, params.tolerance, params.max_iterations);
    if (!sol.converged) warn("SVM solver hit the iteration limit before reaching the KKT tolerance");
    std::vector<std::size_t> sv;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (sol.alpha[i] > 0.0) sv.push_back(i);
    m.support_vectors = data.x.select_rows(sv);
    for (auto i : sv) m.coef.push_back(sol.alpha[i] * (data.y[i] ? 1.0 : -1.0));
    m.bias = sol.rho;
    return m;
}

}  // namespace svseg
