#pragma once
// C-support vector classification with an RBF kernel, solved by SMO with
// second-order working set selection.

#include "svseg/learn/dataset.hpp"

#include <vector>

namespace svseg {

struct SvmParams {
    double c = 1.0;
    /// 0 selects 1 / n_features.
    double gamma = 0.0;
    double tolerance = 1e-3;
    long max_iterations = 10'000'000;

    bool operator==(const SvmParams&) const = default;
};

double resolved_gamma(const SvmParams& p, std::size_t n_features);

struct SvmModel {
    SvmParams params;
    double gamma = 0.0;
    Matrix support_vectors;
    /// alpha_i * y_i per support vector, y in {-1, +1}.
    std::vector<double> coef;
    double bias = 0.0;

    /// Signed margin; positive means foreground.
    double decision(std::span<const double> x) const;
    bool operator==(const SvmModel&) const = default;
};

struct SvmSolution {
    std::vector<double> alpha;
    double rho = 0.0;
    long iterations = 0;
    bool converged = false;
};

double rbf_kernel(std::span<const double> a, std::span<const double> b, double gamma);

/// Solves min 1/2 a'Qa - e'a, 0 <= a_i <= C_i, y'a = 0 with Q_ij = y_i y_j K_ij.
/// `upper` holds C_i per row; y is given as 0/1 labels.
SvmSolution solve_svm_dual(const Matrix& x, std::span<const int> y, std::span<const double> upper, double gamma,
                           double tolerance, long max_iterations);

/// Per-class box bounds C * w[class].
SvmModel fit_svm(const Samples& data, const SvmParams& params, const std::array<double, 2>& weights);

}  // namespace svseg
