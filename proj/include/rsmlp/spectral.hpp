#pragma once

#include "rsmlp/errors.hpp"
#include "rsmlp/hermite.hpp"

#include <complex>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace rsmlp {

using cplx = std::complex<double>;

struct SpectralOptions {
    int scan_points = 1200;
    int panel_order = 12;
    double quad_tol = 1e-10;
    double eta_min = 1e-14;
    double tol = 1e-13;
    int max_iter = 10000;
};

struct SpectralDensity;

// Exact description of the matrix whose spectrum a SpectralDensity holds.
struct SpectralModel {
    enum class Type { Symmetric, Rectangular, Grid };
    Type type = Type::Grid;
    // symmetric: a * sum_i (v_i / sqrt(gamma)) u_i u_i^T + b * GOE
    double a = 0.0, b = 0.0, gamma = 1.0;
    std::vector<double> v, p;
    // rectangular: sqrt(x/(p k)) U V + N / sqrt(p), p/d -> eta, k/d -> gamma
    double x = 0.0, eta = 1.0;
    // grid: law of sqrt(x) * base + GOE, base given only as a density
    std::shared_ptr<const SpectralDensity> base;

    // Stieltjes transform E 1/(lambda - z) (symmetric) or of the p x p Gram matrix
    // (rectangular) at z in the upper half plane, by continuation from Im z = O(1).
    cplx stieltjes(cplx z, const SpectralOptions& opt = {}) const;
    double signal_variance() const;
};

struct SpectralDensity {
    enum class Kind { Eigenvalue, SingularValue };
    Kind kind = Kind::Eigenvalue;
    std::vector<double> grid;      // ascending abscissae
    std::vector<double> density;   // continuous part
    std::vector<double> weights;   // sum_i weights_i density_i f(grid_i) = int f rho
    std::vector<std::pair<double, double>> support;
    std::vector<std::pair<double, double>> atoms;  // (location, mass)
    std::shared_ptr<const SpectralModel> model;

    double lo() const;
    double hi() const;
    double mass() const;
    double integrate(const std::function<double(double)>& f) const;
    double moment(int k) const;
    double cubic_integral() const;  // int rho^3 over the continuous part
    double cdf(double t) const;
    double kolmogorov_distance(std::vector<double> samples) const;
};

// Builds a density from a pointwise evaluator on [lo, hi]; evaluator returns rho(y).
SpectralDensity build_density(const std::function<double(double)>& rho, double lo, double hi,
                              const SpectralOptions& opt, SpectralDensity::Kind kind);

// Eigenvalue law of W^T diag(v) W / sqrt(k d), W Gaussian k x d, k/d -> gamma.
SpectralDensity generalized_mp_density(double gamma, const ReadoutPrior& pv,
                                       const SpectralOptions& opt = {});

// Law of sqrt(x) S + Z, Z GOE with semicircle on [-2, 2].
SpectralDensity free_additive_semicircle(const SpectralDensity& signal, double x,
                                         const SpectralOptions& opt = {});
SpectralDensity symmetric_observation_density(double gamma, const ReadoutPrior& pv, double x,
                                              const SpectralOptions& opt = {});

// (1/x)(1 - (4 pi^2 / 3) int rho^3).
double mmse_symmetric(double x, const SpectralDensity& rho_y);

// Singular-value law of sqrt(x/(p k)) U V + N / sqrt(p), p/d -> eta <= 1, k/d -> gamma.
SpectralDensity rectangular_density(double x, double eta, double gamma,
                                    const SpectralOptions& opt = {});

// (1/x)[1 - eta (1/eta - 1)^2 int rho / y^2 - (pi^2 eta / 3) int rho^3].
double mmse_rectangular(double x, double eta, double gamma, const SpectralDensity& rho_y);

// Marchenko-Pastur eigenvalue law of W W^T / n, W of size m x n, ratio m/n = ratio.
SpectralDensity marchenko_pastur_density(double ratio, const SpectralOptions& opt = {});

}  // namespace rsmlp
