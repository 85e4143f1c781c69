#include "rsmlp/hermite.hpp"

#include "rsmlp/quadrature.hpp"

#include <gsl/gsl_cdf.h>
#include <gsl/gsl_spline.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

namespace rsmlp {

double ActivationSpec::derivative(double x) const {
    if (deriv) return deriv(x);
    const double h = 1e-5 * std::max(1.0, std::abs(x));
    return (eval(x + h) - eval(x - h)) / (2 * h);
}

ActivationSpec hermite_coefficients(const std::string& name, std::function<double(double)> sigma,
                                    const HermiteOptions& opt, std::function<double(double)> dsigma,
                                    std::vector<double> kinks) {
    if (opt.l_max < 2) throw std::domain_error("hermite_coefficients: l_max must be >= 2");
    if (opt.quadrature_order < 4 * opt.l_max)
        throw std::domain_error("hermite_coefficients: quadrature_order must be >= 4 l_max");
    const int panel_order = std::max(20, opt.quadrature_order / 10);
    ActivationSpec a;
    a.name = name;
    a.eval = std::move(sigma);
    a.deriv = std::move(dsigma);
    a.kinks = std::move(kinks);
    a.coefficients.assign(opt.l_max + 1, 0.0);
    for (int l = 0; l <= opt.l_max; ++l) {
        auto f = [&](double z) {
            double h0 = 1.0, h1 = z;
            if (l == 0) return a.eval(z);
            for (int k = 1; k < l; ++k) {
                double h2 = z * h1 - k * h0;
                h0 = h1;
                h1 = h2;
            }
            return h1 * a.eval(z);
        };
        double m = gaussian_mean(f, a.kinks, panel_order);
        if (!std::isfinite(m))
            throw std::domain_error("hermite_coefficients: non-finite coefficient at l = " +
                                    std::to_string(l));
        a.coefficients[l] = m;
    }
    a.second_moment =
        gaussian_mean([&](double z) { double s = a.eval(z); return s * s; }, a.kinks, panel_order);
    if (!std::isfinite(a.second_moment))
        throw std::domain_error("hermite_coefficients: non-finite second moment");
    a.centered = std::abs(a.coefficients[0]) < 1e-10;
    return a;
}

ActivationSpec center_activation(const ActivationSpec& act) {
    ActivationSpec c = act;
    double m0 = act.mu(0);
    auto f = act.eval;
    c.eval = [f, m0](double x) { return f(x) - m0; };
    if (!c.coefficients.empty()) c.coefficients[0] = 0.0;
    c.second_moment = act.second_moment - m0 * m0;
    c.centered = true;
    return c;
}

ActivationSpec make_activation(const std::string& name, const HermiteOptions& opt) {
    if (name == "relu")
        return hermite_coefficients(
            name, [](double x) { return x > 0 ? x : 0.0; }, opt,
            [](double x) { return x > 0 ? 1.0 : 0.0; }, {0.0});
    if (name == "tanh2")
        return hermite_coefficients(
            name, [](double x) { return std::tanh(2 * x); }, opt,
            [](double x) { double c = std::cosh(2 * x); return 2.0 / (c * c); });
    if (name == "tanh2_normalized") {
        double s = std::sqrt(gaussian_mean([](double z) { double t = std::tanh(2 * z); return t * t; }));
        return hermite_coefficients(
            name, [s](double x) { return std::tanh(2 * x) / s; }, opt,
            [s](double x) { double c = std::cosh(2 * x); return 2.0 / (c * c * s); });
    }
    if (name == "tanh2_h3") {
        // tanh(2x) with its linear Hermite component removed, unit variance
        double m1 = gaussian_mean([](double z) { return z * std::tanh(2 * z); });
        double nu = gaussian_mean([](double z) { double t = std::tanh(2 * z); return t * t; });
        double c = std::sqrt(nu - m1 * m1);
        return hermite_coefficients(
            name, [m1, c](double x) { return (std::tanh(2 * x) - m1 * x) / c; }, opt,
            [m1, c](double x) { double ch = std::cosh(2 * x); return (2.0 / (ch * ch) - m1) / c; });
    }
    if (name == "he2")
        return hermite_coefficients(
            name, [](double x) { return (x * x - 1) / std::sqrt(2.0); }, opt,
            [](double x) { return 2 * x / std::sqrt(2.0); });
    if (name == "he3")
        return hermite_coefficients(
            name, [](double x) { return (x * x * x - 3 * x) / std::sqrt(6.0); }, opt,
            [](double x) { return (3 * x * x - 3) / std::sqrt(6.0); });
    if (name == "he2+he3/6")
        return hermite_coefficients(
            name, [](double x) { return (x * x - 1) / std::sqrt(2.0) + (x * x * x - 3 * x) / 6.0; },
            opt, [](double x) { return 2 * x / std::sqrt(2.0) + (3 * x * x - 3) / 6.0; });
    throw std::invalid_argument("unknown activation: " + name);
}

std::vector<std::string> activation_names() {
    return {"relu", "tanh2", "tanh2_normalized", "tanh2_h3", "he2", "he3", "he2+he3/6"};
}

namespace {

const Rule& smooth_rule() {
    static const Rule r = gaussian_panels({});
    return r;
}

double kernel_impl(const ActivationSpec& act, double x,
                   const std::function<double(double)>& f) {
    if (x < -1.0 - 1e-12 || x > 1.0 + 1e-12)
        throw std::domain_error("g_cross: correlation outside [-1, 1]");
    x = std::clamp(x, -1.0, 1.0);
    const double s = std::sqrt(std::max(0.0, 1.0 - x * x));
    if (act.kinks.empty()) {
        const Rule& r = smooth_rule();
        double tot = 0.0;
        for (std::size_t i = 0; i < r.size(); ++i) {
            if (r.w[i] == 0) continue;
            double fu = f(r.x[i]), inner = 0.0;
            if (s == 0.0) {
                inner = f(x * r.x[i]);
            } else {
                for (std::size_t j = 0; j < r.size(); ++j)
                    if (r.w[j] > 0) inner += r.w[j] * f(x * r.x[i] + s * r.x[j]);
            }
            tot += r.w[i] * fu * inner;
        }
        return tot;
    }
    std::vector<double> outer = act.kinks;
    if (s > 0 && s < 0.5) {
        for (double k : act.kinks) {
            double c = k / x;
            for (double t = 0.25 * s; t < 2.0; t *= 4.0) {
                outer.push_back(c + t);
                outer.push_back(c - t);
            }
        }
    }
    Rule ro = gaussian_panels(outer);
    double tot = 0.0;
    for (std::size_t i = 0; i < ro.size(); ++i) {
        double u = ro.x[i], inner = 0.0;
        if (s == 0.0) {
            inner = f(x * u);
        } else {
            std::vector<double> br;
            for (double k : act.kinks) br.push_back((k - x * u) / s);
            Rule ri = gaussian_panels(br);
            for (std::size_t j = 0; j < ri.size(); ++j) inner += ri.w[j] * f(x * u + s * ri.x[j]);
        }
        tot += ro.w[i] * f(u) * inner;
    }
    return tot;
}

}  // namespace

double gaussian_kernel(const ActivationSpec& act, double x) {
    return kernel_impl(act, x, act.eval);
}

double g_cross(const ActivationSpec& act, double x) {
    double m0 = act.mu(0), m1 = act.mu(1), m2 = act.mu(2);
    return gaussian_kernel(act, x) - m0 * m0 - m1 * m1 * x - 0.5 * m2 * m2 * x * x;
}

double g_cross_derivative(const ActivationSpec& act, double x) {
    double m1 = act.mu(1), m2 = act.mu(2);
    auto d = [&act](double z) { return act.derivative(z); };
    return kernel_impl(act, x, d) - m1 * m1 - m2 * m2 * x;
}

struct GTable::Impl {
    gsl_spline* g = nullptr;
    gsl_spline* dg = nullptr;
    ~Impl() {
        if (g) gsl_spline_free(g);
        if (dg) gsl_spline_free(dg);
    }
};

GTable::GTable(const ActivationSpec& act, int nodes) : impl_(std::make_unique<Impl>()) {
    const int ext = 8, n = nodes;
    const double h = M_PI / (n - 1);
    std::vector<double> gv(n), dv(n);
    auto fill = [&](int t, int nt) {
        for (int j = t; j < n; j += nt) {
            double x = std::cos(j * h);
            if (j == 0) x = 1.0;
            if (j == n - 1) x = -1.0;
            gv[j] = g_cross(act, x);
            dv[j] = g_cross_derivative(act, x);
        }
    };
    int nt = std::max(1u, std::min(16u, std::thread::hardware_concurrency()));
    std::vector<std::thread> pool;
    for (int t = 0; t < nt; ++t) pool.emplace_back(fill, t, nt);
    for (auto& th : pool) th.join();
    g1_ = gv[0];
    // even extension around theta = 0 and theta = pi
    std::vector<double> th, ge, de;
    for (int j = -ext; j < n + ext; ++j) {
        int k = j < 0 ? -j : (j >= n ? 2 * (n - 1) - j : j);
        th.push_back(j * h);
        ge.push_back(gv[k]);
        de.push_back(dv[k]);
    }
    impl_->g = gsl_spline_alloc(gsl_interp_cspline, th.size());
    impl_->dg = gsl_spline_alloc(gsl_interp_cspline, th.size());
    gsl_spline_init(impl_->g, th.data(), ge.data(), th.size());
    gsl_spline_init(impl_->dg, th.data(), de.data(), th.size());
}

GTable::~GTable() = default;

double GTable::g(double x) const {
    double t = std::acos(std::clamp(x, -1.0, 1.0));
    return gsl_spline_eval(impl_->g, t, nullptr);
}

double GTable::dg(double x) const {
    double t = std::acos(std::clamp(x, -1.0, 1.0));
    return gsl_spline_eval(impl_->dg, t, nullptr);
}

double ReadoutPrior::mean() const {
    double m = 0.0;
    for (std::size_t i = 0; i < size(); ++i) m += probs[i] * values[i];
    return m;
}

double ReadoutPrior::second_moment() const {
    double m = 0.0;
    for (std::size_t i = 0; i < size(); ++i) m += probs[i] * values[i] * values[i];
    return m;
}

ReadoutPrior ReadoutPrior::normalized() const {
    ReadoutPrior r = *this;
    double s = std::sqrt(second_moment());
    if (s > 0)
        for (double& v : r.values) v /= s;
    return r;
}

void ReadoutPrior::validate() const {
    if (values.empty() || values.size() != probs.size())
        throw std::invalid_argument("ReadoutPrior: atoms and probabilities mismatch");
    double t = 0.0;
    for (double p : probs) {
        if (p < 0) throw std::invalid_argument("ReadoutPrior: negative probability");
        t += p;
    }
    if (std::abs(t - 1.0) > 1e-12) throw std::invalid_argument("ReadoutPrior: probabilities do not sum to 1");
}

ReadoutPrior ReadoutPrior::homogeneous() { return atoms({1.0}, {1.0}, "homogeneous"); }

ReadoutPrior ReadoutPrior::rademacher() { return atoms({-1.0, 1.0}, {0.5, 0.5}, "rademacher"); }

ReadoutPrior ReadoutPrior::gaussian(int n_bins) {
    ReadoutPrior r = bin_effective_readouts(n_bins).normalized();
    r.name = "gaussian";
    return r;
}

ReadoutPrior ReadoutPrior::atoms(std::vector<double> values, std::vector<double> probs, std::string name) {
    ReadoutPrior r;
    r.name = std::move(name);
    r.values = std::move(values);
    r.probs = std::move(probs);
    double t = std::accumulate(r.probs.begin(), r.probs.end(), 0.0);
    if (t > 0 && std::abs(t - 1.0) < 1e-9)
        for (double& p : r.probs) p /= t;
    r.validate();
    return r;
}

ReadoutPrior make_readout_prior(const std::string& name, int n_bins) {
    if (name == "homogeneous") return ReadoutPrior::homogeneous();
    if (name == "rademacher") return ReadoutPrior::rademacher();
    if (name == "gaussian") return ReadoutPrior::gaussian(n_bins);
    throw std::invalid_argument("unknown readout prior: " + name);
}

ReadoutPrior bin_effective_readouts(int n_bins) {
    if (n_bins < 3 || n_bins % 2 == 0)
        throw std::domain_error("bin_effective_readouts: n_bins must be odd and >= 3");
    ReadoutPrior r;
    r.name = "gaussian_bins";
    const double c = 1.0 / std::sqrt(2 * M_PI);
    for (int j = 0; j < n_bins; ++j) {
        double a = j == 0 ? -INFINITY : gsl_cdf_ugaussian_Pinv(double(j) / n_bins);
        double b = j == n_bins - 1 ? INFINITY : gsl_cdf_ugaussian_Pinv(double(j + 1) / n_bins);
        double pa = std::isfinite(a) ? c * std::exp(-0.5 * a * a) : 0.0;
        double pb = std::isfinite(b) ? c * std::exp(-0.5 * b * b) : 0.0;
        double m = (pa - pb) * n_bins;
        if (j == n_bins / 2) m = 0.0;
        r.values.push_back(m);
        r.probs.push_back(1.0 / n_bins);
    }
    // exact antisymmetry
    for (int j = 0; j < n_bins / 2; ++j) {
        double m = 0.5 * (r.values[n_bins - 1 - j] - r.values[j]);
        r.values[j] = -m;
        r.values[n_bins - 1 - j] = m;
    }
    return r;
}

namespace {

Covariance cov_impl(const ActivationSpec& act, const ReadoutPrior& pv, double gamma, double R2,
                    const std::vector<double>& Q, const std::function<double(double)>& g,
                    double g1) {
    if (std::abs(act.mu(0)) > 1e-10) throw std::domain_error("covariance_K_l1: activation not centred");
    if (Q.size() != pv.size()) throw std::out_of_range("covariance_K_l1: Q has no entry for some readout atom");
    double m1 = act.mu(1), m2 = act.mu(2), vb = pv.mean();
    double K = m1 * m1 + 0.5 * m2 * m2 * R2;
    for (std::size_t i = 0; i < pv.size(); ++i)
        K += pv.probs[i] * pv.values[i] * pv.values[i] * g(Q[i]);
    double Kd = m1 * m1 + 0.5 * m2 * m2 * (1 + gamma * vb * vb) + g1;
    return {K, Kd};
}

}  // namespace

Covariance covariance_K_l1(const ActivationSpec& act, const ReadoutPrior& pv, double gamma, double R2,
                           const std::vector<double>& Q) {
    return cov_impl(act, pv, gamma, R2, Q, [&](double x) { return g_cross(act, x); }, g_cross(act, 1.0));
}

Covariance covariance_K_l1(const ActivationSpec& act, const GTable& gt, const ReadoutPrior& pv,
                           double gamma, double R2, const std::vector<double>& Q) {
    return cov_impl(act, pv, gamma, R2, Q, [&](double x) { return gt.g(x); }, gt.g1());
}

}  // namespace rsmlp
