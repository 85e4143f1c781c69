#pragma once

#include "rsmlp/rs_shallow.hpp"

#include <string>
#include <vector>

namespace rsmlp {

// ---- two hidden layers ----

struct L2Inputs {
    ActivationSpec act1, act2;  // inner and outer activations
    ReadoutPrior pv;            // readouts v
    ReadoutPrior pv2;           // binned effective readouts v2, unit second moment
    WeightPrior prior1, prior2;
    double gamma1 = 0.5, gamma2 = 0.5, alpha = 1.0;
    OutputChannel channel = OutputChannel::gaussian(0.2);
};

enum class L2Seed { Universal, ProductOnly, FirstLayerOnly, PartialFirstLayer, Full };
std::string l2_seed_name(L2Seed s);

struct L2SeedSpec {
    L2Seed kind = L2Seed::Universal;
    double threshold = 0.0;  // PartialFirstLayer: Q1(v2) = c 1(|v2| >= threshold)
};

struct OrderParamsL2 {
    std::vector<double> Q1, Q1_hat;    // per v2 bin
    std::vector<double> Q2, Q2_hat;    // row-major [v bin][v2 bin]
    std::vector<double> Q21, Q21_hat;  // per v bin
    std::vector<double> tau;           // per v bin
    double q2(std::size_t i, std::size_t j) const { return Q2[i * Q1.size() + j]; }
};

struct L2Solution {
    OrderParamsL2 params;
    double K = 0.0, K_d = 1.0, eps = 0.0;
    double free_entropy = 0.0;
    L2SeedSpec seed;
    bool converged = false;
    int iterations = 0;
    double residual = 0.0;
    double mean_Q1() const;
    double mean_Q2() const;
    double mean_Q21() const;
};

// Requires mu0 = mu2 = 0 and unit second moment for both activations.
Covariance covariance_K_l2(const ActivationSpec& act1, const ActivationSpec& act2, const ReadoutPrior& pv,
                           const ReadoutPrior& pv2, const OrderParamsL2& p);

OrderParamsL2 seed_l2(const L2Inputs& in, const L2SeedSpec& seed, double c = 0.95);
L2Solution iterate_l2(const L2Inputs& in, const L2SeedSpec& seed, const SolverConfig& cfg = {});
// Same iteration from an explicit starting point.
L2Solution iterate_l2_from(const L2Inputs& in, const OrderParamsL2& start, const SolverConfig& cfg = {});
double free_entropy_l2(const OrderParamsL2& p, const L2Inputs& in, const SolverConfig& cfg = {});
OrderParamsL2 saddle_map_l2(const OrderParamsL2& p, const L2Inputs& in, const SolverConfig& cfg = {});
double saddle_residual_l2(const OrderParamsL2& p, const L2Inputs& in, const SolverConfig& cfg = {});
std::vector<L2SeedSpec> default_seeds_l2(const L2Inputs& in);
std::vector<L2Solution> solve_all_l2(const L2Inputs& in, const SolverConfig& cfg = {});
L2Solution select_l2(const std::vector<L2Solution>& sols);
// First alpha on the grid where the equilibrium mean Q1 reaches level, linearly interpolated; NaN if never.
double l2_transition_alpha(L2Inputs in, const std::vector<double>& grid, double level = 0.5,
                           const SolverConfig& cfg = {});

// ---- L >= 1 hidden layers, mu0 = mu1 = mu2 = 0 ----

struct DeepInputs {
    ActivationSpec act;
    ReadoutPrior pv;
    WeightPrior prior;
    std::vector<double> gammas;  // gamma_1 .. gamma_L
    double alpha = 1.0;
    OutputChannel channel = OutputChannel::gaussian(0.1);
    int depth() const { return (int)gammas.size(); }
};

struct OrderParamsDeep {
    std::vector<double> Q, Q_hat;    // layers 1 .. L-1
    std::vector<double> QL, QL_hat;  // last layer, per readout atom
};

struct DeepSolution {
    OrderParamsDeep params;
    double K = 0.0, K_d = 1.0, eps = 0.0;
    double free_entropy = 0.0;
    Branch seed = Branch::Universal;
    bool converged = false;
    int iterations = 0;
    double residual = 0.0;
};

Covariance covariance_K_deep(const ActivationSpec& act, const ReadoutPrior& pv, const OrderParamsDeep& p);
DeepSolution iterate_deep(const DeepInputs& in, Branch seed, const SolverConfig& cfg = {});
double free_entropy_deep(const OrderParamsDeep& p, const DeepInputs& in);
double saddle_residual_deep(const OrderParamsDeep& p, const DeepInputs& in);
DeepSolution select_deep(const std::vector<DeepSolution>& sols);

}  // namespace rsmlp
