#pragma once

#include "rsmlp/spectral.hpp"

#include <functional>
#include <string>
#include <vector>

namespace rsmlp {

struct WeightPrior {
    enum class Kind { Gaussian, Rademacher, Discrete };
    Kind kind = Kind::Gaussian;
    std::vector<double> values, probs;  // discrete kinds

    static WeightPrior gaussian();
    static WeightPrior rademacher();
    static WeightPrior discrete(std::vector<double> values, std::vector<double> probs);
    double entropy() const;  // nats; discrete kinds only
    std::string name() const;
    void validate() const;
};

WeightPrior make_weight_prior(const std::string& name);

struct OutputChannel {
    enum class Kind { Gaussian, Generic };
    Kind kind = Kind::Gaussian;
    double delta = 1.0;
    std::function<double(double, double)> density;  // P_out(y | lambda)
    double y_scale = 1.0;                           // width of P_out in y around lambda

    static OutputChannel gaussian(double delta);
    static OutputChannel generic(std::function<double(double, double)> density, double y_scale);
};

// E ln E_w exp(-x w^2/2 + x w0 w + sqrt(x) xi w).
double psi_prior(const WeightPrior& prior, double x);
// E w0 <w>, equal to 2 d psi / dx.
double overlap_update(const WeightPrior& prior, double xhat);
// d/dx of overlap_update.
double overlap_update_derivative(const WeightPrior& prior, double xhat);

double phi_out(const OutputChannel& channel, double K, double K_d);

// (1/2) int (x s - ln(1 + x s)) rho_C(s) ds.
double psi_structured(const SpectralDensity& rho_c, double x);

}  // namespace rsmlp
