#pragma once

#include "rsmlp/hermite.hpp"
#include "rsmlp/teacher_student.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <vector>

namespace rsmlp {

struct LinearEstimate {
    Eigen::VectorXd S1;  // posterior mean of W^T v / sqrt(k)
    bool skipped = false;
};

// Posterior mean of S1 in y = mu1 S1.x / sqrt(d) + noise, with delta1 the noise variance over mu1^2.
// y is used as given; callers remove the constant part first.
LinearEstimate estimate_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double mu1, double delta1);

// q1 = qh / (qh + 1), qh = alpha1 / (1 + delta1 - q1).
double linear_regime_overlap(double alpha1, double delta1);

struct GampConfig {
    int max_iter = 200;
    double tol = 1e-6;          // relative change of the matrix estimate
    double damping_mean = 0.7;  // weight of the previous iterate
    double damping_var = 0.9;
    double divergence = 1e3;    // relative to the prior scale
    // Refit the linear part on y minus the quadratic prediction, with the noise left after the quadratic stage.
    bool refine_linear = false;
};

struct GampState {
    Eigen::MatrixXd S2;      // d x d, symmetric
    double variance = 0.0;   // per-entry mse estimate, (1/d)|S - S2|_F^2
    Eigen::VectorXd onsager; // n
    int iteration = 0;
    double damping = 0.7;
};

struct GampFit {
    double y0 = 0.0;
    Eigen::VectorXd S1;            // linear part
    Eigen::MatrixXd S2;            // estimate of W^T diag(v) W / sqrt(kd)
    ActivationSpec act;
    double delta_tilde = 0.0;
    bool linear_skipped = false;
    bool quadratic_skipped = false;  // mu2 = 0
    int iterations = 0;
    bool converged = false;
    std::vector<double> trace;       // relative change per iteration
    std::vector<double> snr_trace;   // effective denoising SNR per iteration
};

// RIE for R = S + sqrt(noise) GOE, with a kernel-smoothed empirical spectral density of R.
// Returns the estimate and writes the implied mse per entry. With a finite prior_power, the eigenvalues
// are shrunk so that (1/d)|estimate|^2 <= max(0, prior_power - mse).
Eigen::MatrixXd rie_denoise(const Eigen::MatrixXd& R, double noise, double* mse = nullptr,
                            double prior_power = INFINITY);

// act is the uncentred activation of the data; only its Hermite description is used.
GampFit gamp_rie_fit(const Dataset& data, const ActivationSpec& act, double delta, const GampConfig& cfg = {});
double gamp_rie_predict(const GampFit& fit, const Eigen::VectorXd& x);
Eigen::VectorXd gamp_rie_predict_batch(const GampFit& fit, const Eigen::MatrixXd& X);

}  // namespace rsmlp
