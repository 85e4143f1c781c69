#pragma once

#include "rsmlp/hermite.hpp"
#include "rsmlp/scalar_channels.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace rsmlp {

struct Architecture {
    int d = 100;
    std::vector<int> widths{50};  // k_1 .. k_L
    ActivationSpec act;           // applied on every hidden layer
    int depth() const { return (int)widths.size(); }
    void validate() const;
};

struct TeacherParams {
    Architecture arch;
    std::vector<Eigen::MatrixXd> W;  // W[l] is k_{l+1} x k_l, k_0 = d
    Eigen::VectorXd v;               // k_L
    std::uint64_t seed = 0;
};

struct CovarianceSpec {
    enum class Kind { Identity, Wishart, File };
    Kind kind = Kind::Identity;
    int d0 = 0;        // Wishart: C = W0 W0^T / d0, W0 is d x d0
    std::string path;  // File: whitespace separated d x d matrix
    static CovarianceSpec identity() { return {}; }
    static CovarianceSpec wishart(int d0) { return {Kind::Wishart, d0, {}}; }
    static CovarianceSpec file(std::string p) { return {Kind::File, 0, std::move(p)}; }
    std::string describe() const;
};

struct Dataset {
    Eigen::MatrixXd X;  // n x d
    Eigen::VectorXd y;  // n
    double delta = 0.1;
    CovarianceSpec covariance;
    TeacherParams teacher;
    WeightPrior weight_prior;
    ReadoutPrior readout_prior;
    std::uint64_t seed = 0;
    int n() const { return (int)X.rows(); }
    int d() const { return (int)X.cols(); }
};

// Weights i.i.d. from the priors. Gaussian readouts are drawn from N(0,1), other readout laws from their atoms.
TeacherParams sample_teacher(const Architecture& arch, const WeightPrior& wp, const ReadoutPrior& pv, std::mt19937_64& rng);

// Inputs from N(0, C) and y = F(x) + sqrt(delta) z. Deterministic in seed.
Dataset generate_dataset(const Architecture& arch, const WeightPrior& wp, const ReadoutPrior& pv, int n,
                         double delta, const CovarianceSpec& cov, std::uint64_t seed);

// Gaussian inputs with the dataset's covariance, from an independent stream.
Eigen::MatrixXd sample_inputs(int n, int d, const CovarianceSpec& cov, std::uint64_t seed);

double forward(const TeacherParams& th, const Eigen::VectorXd& x);
Eigen::VectorXd forward_batch(const TeacherParams& th, const Eigen::MatrixXd& X);  // rows of X

struct BinnedProfile {
    std::vector<double> centers;
    std::vector<double> mean;  // NaN for empty bins
    std::vector<int> count;
};

struct OverlapReport {
    std::vector<double> R;        // R_1 .. R_lmax for the last layer
    std::vector<double> Q_inner;  // mean diagonal overlap of layers 1 .. L-1
    BinnedProfile Q_last;         // diagonal overlap of the last layer binned by readout
    // L = 2 only
    BinnedProfile Q21;            // product matrix W2 W1, binned by v
    BinnedProfile Q1_by_v2;       // first layer binned by effective readouts v2 = W2^T v / sqrt(k2)
    std::vector<double> Q2_grid;  // [v bin][v2 bin], row-major, NaN for empty cells
};

// Readout bins split [-2, 2] into n_bins equal intervals; values outside go to the edge bins.
OverlapReport measure_overlaps(const TeacherParams& a, const TeacherParams& b, int l_max = 4, int n_bins = 8);

struct ErrorReport {
    double gibbs = 0.0;        // mean over samples of E_x (lambda - lambda0)^2
    double bayes_proxy = 0.0;  // gibbs / 2
    double bayes_mean = 0.0;   // E_x (mean_s lambda_s - lambda0)^2
    // E_x lambda^2, -2 E_x lambda lambda0, E_x lambda0^2, averaged over samples; they sum to gibbs
    double student_power = 0.0, cross = 0.0, teacher_power = 0.0;
};

ErrorReport empirical_errors(const std::vector<TeacherParams>& samples, const TeacherParams& teacher,
                             const Eigen::MatrixXd& X_test);

struct MetropolisConfig {
    int max_sweeps = 100000;
    int thin = 10;               // keep one sample every thin sweeps
    int plateau_window = 1000;   // stop when the windowed mean error moves less than plateau_tol
    double plateau_tol = 1e-4;
    int n_test = 2000;
    bool init_teacher = true;    // informative init; otherwise a prior sample
    std::uint64_t seed = 1;
};

struct MetropolisResult {
    std::vector<Eigen::MatrixXd> samples;  // thinned W
    std::vector<int> sample_sweeps;
    std::vector<double> half_gibbs;        // per sweep, E_x (lambda - lambda0)^2 / 2
    double acceptance = 0.0;
    int sweeps = 0;
    bool plateau_stop = false;
};

// Single-site flip Metropolis for L = 1 with binary weights, readouts fixed to the teacher's.
MetropolisResult metropolis_sample(const Dataset& data, const MetropolisConfig& cfg);

TeacherParams with_weights(const TeacherParams& base, const Eigen::MatrixXd& W);

// E(l1 - l2)^2 / E(l1 - l0)^2 - 1 per aligned sample; NaN when the denominator vanishes.
std::vector<double> nishimori_deviation(const MetropolisResult& a, const MetropolisResult& b,
                                        const TeacherParams& teacher, const Eigen::MatrixXd& X_test);

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace rsmlp
