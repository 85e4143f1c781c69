#pragma once

#include "rsmlp/hermite.hpp"
#include "rsmlp/potentials.hpp"
#include "rsmlp/scalar_channels.hpp"

#include <memory>
#include <string>
#include <vector>

namespace rsmlp {

enum class Branch { Universal, Partial, Specialisation };
std::string branch_name(Branch b);

struct SolverConfig {
    double damping = 0.5;  // weight of the previous iterate
    double tol = 1e-9;
    int max_iter = 50000;
    double seed_overlap = 0.95;
    double deep_seed_overlap = 1.0;  // deep chains: informative seeds start here
    PotentialOptions potentials;
};

struct ShallowInputs {
    ActivationSpec act;
    ReadoutPrior pv;
    WeightPrior prior;
    double gamma = 0.5;
    double alpha = 1.0;
    OutputChannel channel = OutputChannel::gaussian(0.1);
};

struct Seed {
    Branch branch = Branch::Universal;
    double threshold = 0.0;  // partial seeds: Q(v) = c 1(|v| >= threshold)
};

struct OrderParamsL1 {
    std::vector<double> Q, Q_hat;  // indexed like pv.values
    double R2 = 0.0, R2_hat = 0.0, tau = 0.0;
};

struct RSolution {
    OrderParamsL1 params;
    double free_entropy = 0.0;
    double K = 0.0, K_d = 0.0, eps = 0.0;  // eps = K_d - K
    Branch branch = Branch::Universal;      // classification of the reached point
    double threshold = 0.0;                 // smallest specialised |v| for partial points
    Seed seed;
    bool converged = false;
    int iterations = 0;
    double residual = 0.0;
    std::string model = "rs";  // "rs", "sp" or "uni"
};

// Shared read-only resources, memoised per activation and readout law.
std::shared_ptr<const GTable> shared_gtable(const ActivationSpec& act);
std::shared_ptr<const DenoisingPotential> shallow_potential(const ShallowInputs& in, const SolverConfig& cfg);

// 2 d phi_out / dK.
double phi_out_slope(const OutputChannel& ch, double K, double K_d);

RSolution iterate_l1(const ShallowInputs& in, const Seed& seed, const SolverConfig& cfg = {});
// Same map started from given overlaps; label is recorded as the seed.
RSolution iterate_l1_from(const ShallowInputs& in, const OrderParamsL1& start, const Seed& label,
                          const SolverConfig& cfg = {});
double free_entropy_l1(const OrderParamsL1& p, const ShallowInputs& in, const SolverConfig& cfg = {});
// One undamped application of the saddle map; hats and tau are evaluated at the input point.
OrderParamsL1 saddle_map_l1(const std::vector<double>& Q, double R2, const ShallowInputs& in,
                            const SolverConfig& cfg = {});
// Sup-norm of F(x) - x for the full saddle map at p, recomputed from scratch.
double saddle_residual_l1(const OrderParamsL1& p, const ShallowInputs& in, const SolverConfig& cfg = {});

enum class Ansatz { Sp, Uni };
double simplified_free_entropy(const OrderParamsL1& p, const ShallowInputs& in, Ansatz which,
                               const SolverConfig& cfg = {});
RSolution iterate_simplified(const ShallowInputs& in, Ansatz which, const Seed& seed, const SolverConfig& cfg = {});

// All seeds: universal, specialisation and one partial seed per distinct |v|.
std::vector<Seed> default_seeds(const ReadoutPrior& pv);
std::vector<RSolution> solve_all_l1(const ShallowInputs& in, const SolverConfig& cfg = {});
RSolution select_branch(const std::vector<RSolution>& solutions);

double gen_error(const RSolution& sol, const OutputChannel& ch, bool include_noise = false);
double mutual_information(double f_n, double delta);

enum class TransitionRule { Simplified, Full };
// sup{alpha : universal free entropy exceeds the specialised one}, by bisection to resolution.
double alpha_sp(ShallowInputs in, double lo, double hi, TransitionRule rule = TransitionRule::Simplified,
                const SolverConfig& cfg = {}, double resolution = 1e-3);

}  // namespace rsmlp
