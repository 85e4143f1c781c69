#pragma once

#include "rsmlp/gamp_rie.hpp"
#include "rsmlp/rs_deep.hpp"
#include "rsmlp/rs_shallow.hpp"
#include "rsmlp/teacher_student.hpp"

#include "json.hpp"

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace rsmlp {

struct SweepConfig {
    std::string task = "l1";  // l1 | l2 | deep | gamp | simulate | spectrum
    std::string activation = "relu";
    std::string activation2;  // l2 outer layer; empty means activation
    bool center = true;       // remove mu0 before solving
    std::string weight_prior = "gaussian";
    std::string weight_prior2;  // l2 second layer; empty means weight_prior
    std::string readout_prior = "homogeneous";
    int readout_bins = 21;
    int v2_bins = 21;
    double gamma = 0.5;
    std::vector<double> gammas;  // l2: {gamma1, gamma2}; deep: gamma_1 .. gamma_L
    std::vector<double> alphas;
    double delta = 0.1;
    std::string channel = "gaussian";
    std::vector<std::uint64_t> seeds;
    std::vector<std::string> branches;  // seed families to run; empty means all
    bool warm_start = true;
    bool refine_alpha_sp = false;  // bisect alpha_sp inside the bracketing grid interval
    std::string out;
    std::string format = "csv";
    int threads = 1;
    std::string cache_dir;
    SolverConfig solver;

    // spectrum
    std::string spectrum = "generalized_mp";  // generalized_mp | observation | rectangular | marchenko_pastur
    double snr = 1.0;
    double eta = 0.5;
    double ratio = 0.5;

    // simulate / gamp
    int d = 100;
    std::string method = "gamp";  // simulate: gamp | metropolis
    std::string dataset;          // gamp: existing dataset file
    std::string covariance = "identity";  // identity | wishart:<d0> | file:<path>
    int n_test = 2000;
    int chains = 2;
    MetropolisConfig metropolis;
    GampConfig gamp;
};

// Throws ConfigError naming the offending field path (e.g. "solver.damping").
SweepConfig config_from_json(const nlohmann::json& j, SweepConfig base = {});
SweepConfig load_config(const std::string& path, SweepConfig base = {});
void validate_config(const SweepConfig& cfg);
nlohmann::json config_to_json(const SweepConfig& cfg);

// "LO:HI:STEP" inclusive of HI up to rounding; a single number gives one point.
std::vector<double> parse_alpha_range(const std::string& spec);

struct PhaseRecord {
    double alpha = 0.0;
    std::string branch;
    double free_entropy = 0.0;
    double eps = 0.0;  // noise removed
    double K = 0.0, K_d = 0.0;
    bool converged = false;
    int iterations = 0;
    double residual = 0.0;
    std::vector<std::pair<std::string, double>> overlaps;
    std::vector<std::pair<std::string, double>> extra;  // JSON only
    std::string reached;  // classification of the point itself
};

struct SweepFailure {
    double alpha = 0.0;
    std::string branch;
    std::string error;
};

struct SweepResult {
    std::string task;
    std::vector<PhaseRecord> records;
    std::vector<SweepFailure> failures;
    std::map<std::string, double> alpha_sp;  // per branch family
    std::vector<std::pair<double, double>> spectrum;
    std::vector<std::pair<double, double>> atoms;
    bool ok() const { return failures.empty(); }
};

// Pure computation; no files touched.
SweepResult compute_sweep(const SweepConfig& cfg);
void write_csv(const SweepResult& r, std::ostream& os);
void write_json(const SweepResult& r, std::ostream& os);
// Validates, computes and writes cfg.out (stdout when empty) plus <out>.failures.json when anything failed.
SweepResult run_sweep(const SweepConfig& cfg);

ShallowInputs shallow_inputs(const SweepConfig& cfg, double alpha);
L2Inputs l2_inputs(const SweepConfig& cfg, double alpha);
DeepInputs deep_inputs(const SweepConfig& cfg, double alpha);
CovarianceSpec parse_covariance(const std::string& spec);

// Datasets per (alpha, seed), fits or samples, theory attached. Zero seeds give theory only.
nlohmann::json run_experiment(const SweepConfig& cfg);
// GAMP-RIE on one stored dataset: errors of the linear and full predictors on fresh inputs.
nlohmann::json gamp_report(const Dataset& data, const SweepConfig& cfg);

}  // namespace rsmlp
