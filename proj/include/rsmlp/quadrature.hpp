#pragma once

#include <functional>
#include <vector>

namespace rsmlp {

/// Nodes and weights of a 1-D quadrature rule.
struct Rule {
    std::vector<double> x;
    std::vector<double> w;
    std::size_t size() const { return x.size(); }
};

// Gauss-Hermite rule for the standard normal weight (probabilists' convention).
// Weights sum to one. Rules are cached per order.
const Rule& gauss_hermite(int n);

// Gauss-Legendre rule on [-1, 1].
const Rule& gauss_legendre(int n);

// Composite Gauss-Legendre rule for the standard normal weight on [-L, L],
// split at the given breakpoints. Used for integrands with kinks or jumps.
Rule gaussian_panels(const std::vector<double>& breaks, double L = 13.0,
                     double max_width = 2.0, int order = 20);

// E f(z), z ~ N(0,1), by Gauss-Legendre panels split at the kinks. Gauss-Hermite converges
// slowly for integrands with poles near the real axis (tanh).
double gaussian_mean(const std::function<double(double)>& f,
                     const std::vector<double>& kinks = {}, int panel_order = 20);

}  // namespace rsmlp
