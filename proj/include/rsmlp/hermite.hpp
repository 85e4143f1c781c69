#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace rsmlp {

/// Hermite description of an activation: mu_l = E He_l(z) sigma(z), nu = E sigma(z)^2.
struct ActivationSpec {
    std::string name;
    std::vector<double> coefficients;
    double second_moment = 0.0;
    std::function<double(double)> eval;
    std::function<double(double)> deriv;  // optional; finite differences otherwise
    std::vector<double> kinks;            // points where sigma or sigma' is not smooth
    bool centered = false;

    double mu(int l) const {
        return l < (int)coefficients.size() ? coefficients[l] : 0.0;
    }
    double derivative(double x) const;
};

struct HermiteOptions {
    int l_max = 8;
    int quadrature_order = 200;  // node budget; one tenth of it per Gauss-Legendre panel, at least 20
};

ActivationSpec hermite_coefficients(const std::string& name, std::function<double(double)> sigma,
                                    const HermiteOptions& opt = {},
                                    std::function<double(double)> dsigma = {},
                                    std::vector<double> kinks = {});

ActivationSpec center_activation(const ActivationSpec& act);

// Registry: relu, tanh2, tanh2_normalized, tanh2_h3, he2, he3, he2+he3/6.
ActivationSpec make_activation(const std::string& name, const HermiteOptions& opt = {});
std::vector<std::string> activation_names();

// E sigma(y) sigma(z) for standard normals with correlation x.
double gaussian_kernel(const ActivationSpec& act, double x);

// g(x) = E sigma(y)sigma(z) - mu0^2 - mu1^2 x - mu2^2 x^2 / 2 by 2-D quadrature.
double g_cross(const ActivationSpec& act, double x);
// g'(x) through E sigma'(y) sigma'(z) - mu1^2 - mu2^2 x.
double g_cross_derivative(const ActivationSpec& act, double x);

/// Tabulated g and g' on [-1, 1], uniform in theta = arccos x.
class GTable {
public:
    explicit GTable(const ActivationSpec& act, int nodes = 1025);
    ~GTable();
    GTable(const GTable&) = delete;
    GTable& operator=(const GTable&) = delete;

    double g(double x) const;
    double dg(double x) const;
    double g1() const { return g1_; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
    double g1_ = 0.0;
};

/// Discrete readout law.
struct ReadoutPrior {
    std::string name;
    std::vector<double> values;
    std::vector<double> probs;

    double mean() const;
    double second_moment() const;
    std::size_t size() const { return values.size(); }
    ReadoutPrior normalized() const;  // rescaled to unit second moment
    void validate() const;

    static ReadoutPrior homogeneous();
    static ReadoutPrior rademacher();
    static ReadoutPrior gaussian(int n_bins = 21);
    static ReadoutPrior atoms(std::vector<double> values, std::vector<double> probs,
                              std::string name = "atoms");
};

ReadoutPrior make_readout_prior(const std::string& name, int n_bins = 21);

// Equal-probability bins of N(0,1) with atoms at the conditional means.
ReadoutPrior bin_effective_readouts(int n_bins);

struct Covariance {
    double K;
    double K_d;
};

// K = mu1^2 + mu2^2 R2 / 2 + E v^2 g(Q(v)),  K_d = mu1^2 + mu2^2 (1 + gamma vbar^2) / 2 + g(1).
Covariance covariance_K_l1(const ActivationSpec& act, const ReadoutPrior& pv, double gamma,
                           double R2, const std::vector<double>& Q);
Covariance covariance_K_l1(const ActivationSpec& act, const GTable& gt, const ReadoutPrior& pv,
                           double gamma, double R2, const std::vector<double>& Q);

}  // namespace rsmlp
