#include "rsmlp/gamp_rie.hpp"

#include "rsmlp/errors.hpp"
#include "rsmlp/rs_shallow.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <sstream>

namespace rsmlp {

LinearEstimate estimate_linear(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double mu1, double delta1) {
    const int n = (int)X.rows(), d = (int)X.cols();
    LinearEstimate r;
    r.S1 = Eigen::VectorXd::Zero(d);
    if (std::abs(mu1) < 1e-8) {
        r.skipped = true;
        return r;
    }
    if (!(delta1 > 0)) throw std::domain_error("estimate_linear: delta1 must be positive");
    if (y.size() != n) throw std::invalid_argument("estimate_linear: size mismatch");
    if (n == 0) return r;
    if (!std::isfinite(delta1)) return r;
    Eigen::MatrixXd P = Eigen::MatrixXd::Identity(d, d);
    P.selfadjointView<Eigen::Lower>().rankUpdate(X.transpose(), 1.0 / (d * delta1));
    Eigen::VectorXd b = X.transpose() * (y / mu1) / (std::sqrt((double)d) * delta1);
    Eigen::LLT<Eigen::MatrixXd> llt(P.selfadjointView<Eigen::Lower>());
    r.S1 = llt.solve(b);
    return r;
}

double linear_regime_overlap(double alpha1, double delta1) {
    if (alpha1 < 0 || !(delta1 > 0)) throw std::domain_error("linear_regime_overlap: need alpha1 >= 0, delta1 > 0");
    double q = 0.0;
    for (int it = 0; it < 1000000; ++it) {
        double qh = alpha1 / (1.0 + delta1 - q);
        double qn = qh / (qh + 1.0);
        if (std::abs(qn - q) < 1e-12) return qn;
        q = qn;
    }
    return q;
}

Eigen::MatrixXd rie_denoise(const Eigen::MatrixXd& R, double noise, double* mse, double prior_power) {
    const int d = (int)R.rows();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(R);
    if (es.info() != Eigen::Success) throw NumericError("rie_denoise: eigendecomposition failed");
    const Eigen::VectorXd& lam = es.eigenvalues();
    // at least a couple of mean eigenvalue spacings
    const double spread = std::sqrt((lam.array() - lam.mean()).square().mean());
    const double eta = std::max(std::pow((double)d, -1.0 / 3.0), 2.0 * spread * std::pow((double)d, -2.0 / 3.0));
    Eigen::VectorXd xi(d);
    double rho3 = 0.0;
    for (int i = 0; i < d; ++i) {
        double h = 0.0, rho = 0.0;
        for (int j = 0; j < d; ++j) {
            double u = lam[i] - lam[j], den = u * u + eta * eta;
            h += u / den;
            rho += eta / den;
        }
        h /= d;
        rho /= M_PI * d;
        xi[i] = lam[i] - 2.0 * noise * h;
        rho3 += rho * rho / d;
    }
    const double m = std::max(0.0, noise - 4.0 * M_PI * M_PI / 3.0 * noise * noise * rho3);
    if (mse) *mse = m;
    // the estimate cannot carry more power than the prior minus the error
    if (std::isfinite(prior_power)) {
        double cap = std::max(0.0, prior_power - m), pw = xi.squaredNorm() / d;
        if (pw > cap) xi *= std::sqrt(cap / pw);
    }
    return es.eigenvectors() * xi.asDiagonal() * es.eigenvectors().transpose();
}

namespace {

// Tr[Z_mu S] with Z_mu = (x x^T - I) / sqrt(d)
Eigen::VectorXd sense(const Eigen::MatrixXd& X, const Eigen::MatrixXd& S) {
    const double sd = std::sqrt((double)X.cols());
    Eigen::VectorXd q = (X * S).cwiseProduct(X).rowwise().sum();
    return (q.array() - S.trace()) / sd;
}

// sum_mu g_mu Z_mu
Eigen::MatrixXd adjoint(const Eigen::MatrixXd& X, const Eigen::VectorXd& g) {
    const int d = (int)X.cols();
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(d, d);
    // split by sign so both rank updates are symmetric
    Eigen::MatrixXd Xp = X.array().colwise() * g.cwiseMax(0.0).array().sqrt();
    Eigen::MatrixXd Xn = X.array().colwise() * (-g).cwiseMax(0.0).array().sqrt();
    M.selfadjointView<Eigen::Lower>().rankUpdate(Xp.transpose(), 1.0);
    M.selfadjointView<Eigen::Lower>().rankUpdate(Xn.transpose(), -1.0);
    M = M.selfadjointView<Eigen::Lower>();
    M.diagonal().array() -= g.sum();
    return M / std::sqrt((double)d);
}

}  // namespace

GampFit gamp_rie_fit(const Dataset& data, const ActivationSpec& act, double delta, const GampConfig& cfg) {
    if (data.teacher.W.size() != 1) throw std::domain_error("gamp_rie_fit: one hidden layer only");
    if (!(delta > 0)) throw std::domain_error("gamp_rie_fit: delta must be positive");
    const int n = data.n(), d = data.d();
    const int k = (int)data.teacher.v.size();
    const double mu0 = act.mu(0), mu1 = act.mu(1), mu2 = act.mu(2);
    GampFit fit;
    fit.act = act;
    fit.S2 = Eigen::MatrixXd::Zero(d, d);
    fit.y0 = n ? data.y.mean() : 0.0;

    Eigen::VectorXd yc = data.y.array() - fit.y0;
    double nu = act.second_moment;
    double delta1 = std::abs(mu1) > 1e-8 ? (delta + nu - mu0 * mu0 - mu1 * mu1) / (mu1 * mu1) : INFINITY;
    LinearEstimate lin = estimate_linear(data.X, yc, mu1, delta1);
    fit.S1 = lin.S1;
    fit.linear_skipped = lin.skipped;

    if (std::abs(mu2) < 1e-8 || n == 0) {
        fit.quadratic_skipped = true;
        fit.converged = true;
        return fit;
    }
    ActivationSpec c = act;
    if (std::abs(mu0) > 0) c = center_activation(act);
    const double g1 = shared_gtable(c)->g1();
    fit.delta_tilde = (delta + g1) / (mu2 * mu2 / 4.0);

    Eigen::VectorXd yl = fit.linear_skipped ? Eigen::VectorXd::Zero(n) : Eigen::VectorXd(mu1 * data.X * fit.S1 / std::sqrt((double)d));
    Eigen::VectorXd yt = (yc - yl) / (mu2 / 2.0);

    // prior scale: (1/d)|S|^2 = E v^2 + (k/d) vbar^2
    const auto& v = data.teacher.v;
    const double vbar = v.mean(), v2 = v.squaredNorm() / k;
    const double prior = v2 + (double)k / d * vbar * vbar;

    GampState st;
    st.S2 = Eigen::MatrixXd::Zero(d, d);
    st.variance = prior;
    st.onsager = Eigen::VectorXd::Zero(n);
    st.damping = cfg.damping_mean;
    for (st.iteration = 1; st.iteration <= cfg.max_iter; ++st.iteration) {
        double V = 2.0 * st.variance;
        Eigen::VectorXd omega = sense(data.X, st.S2) - V * st.onsager;
        Eigen::VectorXd g = (yt - omega) / (fit.delta_tilde + V);
        double A = 2.0 * n / (d * (fit.delta_tilde + V));
        Eigen::MatrixXd R = st.S2 + adjoint(data.X, g) / A;
        double noise = g.squaredNorm() / (A * A);
        double mse = 0.0;
        Eigen::MatrixXd S_new = rie_denoise(R, noise, &mse, prior);
        fit.snr_trace.push_back(1.0 / noise);

        double norm = st.S2.norm();
        Eigen::MatrixXd S_next = cfg.damping_mean * st.S2 + (1.0 - cfg.damping_mean) * S_new;
        double change = (S_next - st.S2).norm() / std::max(norm, 1e-300);
        fit.trace.push_back(change);
        st.S2 = S_next;
        st.variance = cfg.damping_var * st.variance + (1.0 - cfg.damping_var) * mse;
        st.onsager = g;
        if (!std::isfinite(change) || st.S2.norm() / std::sqrt((double)d) > cfg.divergence * std::sqrt(prior)) {
            std::ostringstream os;
            os << "gamp_rie_fit diverged at iteration " << st.iteration << "; relative changes:";
            for (double t : fit.trace) os << ' ' << t;
            throw NumericError(os.str());
        }
        if (st.iteration > 1 && change < cfg.tol) {
            fit.converged = true;
            break;
        }
    }
    fit.iterations = std::min(st.iteration, cfg.max_iter);
    fit.S2 = st.S2;
    if (cfg.refine_linear && !fit.linear_skipped) {
        double resid = delta + g1 + mu2 * mu2 / 2.0 * st.variance;
        Eigen::VectorXd y2 = yc - mu2 / 2.0 * sense(data.X, fit.S2);
        fit.S1 = estimate_linear(data.X, y2, mu1, resid / (mu1 * mu1)).S1;
    }
    return fit;
}

Eigen::VectorXd gamp_rie_predict_batch(const GampFit& fit, const Eigen::MatrixXd& X) {
    const int d = (int)fit.S2.rows();
    if (X.cols() != d || fit.S1.size() != d) throw std::invalid_argument("gamp_rie_predict: dimension mismatch");
    const double sd = std::sqrt((double)d);
    Eigen::VectorXd out = Eigen::VectorXd::Constant(X.rows(), fit.y0);
    if (!fit.linear_skipped) out += fit.act.mu(1) * X * fit.S1 / sd;
    if (!fit.quadratic_skipped) out += fit.act.mu(2) / 2.0 * sense(X, fit.S2);
    return out;
}

double gamp_rie_predict(const GampFit& fit, const Eigen::VectorXd& x) {
    return gamp_rie_predict_batch(fit, x.transpose())[0];
}

}  // namespace rsmlp
