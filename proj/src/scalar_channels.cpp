#include "rsmlp/scalar_channels.hpp"

#include "rsmlp/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rsmlp {

WeightPrior WeightPrior::gaussian() { return WeightPrior{}; }

WeightPrior WeightPrior::rademacher() {
    WeightPrior p;
    p.kind = Kind::Rademacher;
    p.values = {-1.0, 1.0};
    p.probs = {0.5, 0.5};
    return p;
}

WeightPrior WeightPrior::discrete(std::vector<double> values, std::vector<double> probs) {
    WeightPrior p;
    p.kind = Kind::Discrete;
    p.values = std::move(values);
    p.probs = std::move(probs);
    p.validate();
    return p;
}

double WeightPrior::entropy() const {
    if (kind == Kind::Gaussian) throw std::domain_error("entropy: continuous prior");
    double h = 0.0;
    for (double p : probs)
        if (p > 0) h -= p * std::log(p);
    return h;
}

std::string WeightPrior::name() const {
    switch (kind) {
        case Kind::Gaussian: return "gaussian";
        case Kind::Rademacher: return "rademacher";
        default: return "discrete";
    }
}

void WeightPrior::validate() const {
    if (kind == Kind::Gaussian) return;
    if (values.empty() || values.size() != probs.size())
        throw std::invalid_argument("WeightPrior: atoms and probabilities mismatch");
    double t = 0, m = 0, m2 = 0;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (probs[i] < 0) throw std::invalid_argument("WeightPrior: negative probability");
        t += probs[i];
        m += probs[i] * values[i];
        m2 += probs[i] * values[i] * values[i];
    }
    if (std::abs(t - 1) > 1e-12 || std::abs(m) > 1e-12 || std::abs(m2 - 1) > 1e-12)
        throw std::invalid_argument("WeightPrior: must be normalised, centred, unit second moment");
}

WeightPrior make_weight_prior(const std::string& name) {
    if (name == "gaussian") return WeightPrior::gaussian();
    if (name == "rademacher") return WeightPrior::rademacher();
    throw std::invalid_argument("unknown weight prior: " + name);
}

OutputChannel OutputChannel::gaussian(double delta) {
    if (!(delta > 0)) throw std::domain_error("OutputChannel: delta must be positive");
    OutputChannel c;
    c.delta = delta;
    c.y_scale = std::sqrt(delta);
    return c;
}

OutputChannel OutputChannel::generic(std::function<double(double, double)> density, double y_scale) {
    OutputChannel c;
    c.kind = Kind::Generic;
    c.density = std::move(density);
    c.y_scale = y_scale;
    return c;
}

namespace {

// For fixed w0 and xi: log Z and the posterior mean/second moment of w.
struct Site {
    double logz, mean, second;
};

Site discrete_site(const WeightPrior& p, double x, double w0, double xi) {
    double b = x * w0 + std::sqrt(x) * xi;
    double mx = -INFINITY;
    std::vector<double> e(p.values.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
        double w = p.values[i];
        e[i] = p.probs[i] > 0 ? std::log(p.probs[i]) - 0.5 * x * w * w + b * w : -INFINITY;
        mx = std::max(mx, e[i]);
    }
    double z = 0, m = 0, s = 0;
    for (std::size_t i = 0; i < e.size(); ++i) {
        double q = std::exp(e[i] - mx);
        z += q;
        m += q * p.values[i];
        s += q * p.values[i] * p.values[i];
    }
    return {mx + std::log(z), m / z, s / z};
}

template <class F>
double average_over_teacher(const WeightPrior& p, F f) {
    const Rule& gh = gauss_hermite(200);
    double tot = 0.0;
    for (std::size_t a = 0; a < p.values.size(); ++a) {
        if (p.probs[a] == 0) continue;
        double s = 0.0;
        for (std::size_t j = 0; j < gh.size(); ++j)
            if (gh.w[j] > 0) s += gh.w[j] * f(p.values[a], gh.x[j]);
        tot += p.probs[a] * s;
    }
    return tot;
}

}  // namespace

double psi_prior(const WeightPrior& prior, double x) {
    if (x < 0) throw std::domain_error("psi_prior: x must be non-negative");
    if (x == 0) return 0.0;
    if (prior.kind == WeightPrior::Kind::Gaussian) return 0.5 * (x - std::log1p(x));
    if (prior.kind == WeightPrior::Kind::Rademacher) {
        // -x/2 + E ln cosh(x + sqrt(x) xi), with a stable log cosh
        const Rule& gh = gauss_hermite(200);
        double s = 0.0;
        for (std::size_t j = 0; j < gh.size(); ++j) {
            if (gh.w[j] == 0) continue;
            double h = std::abs(x + std::sqrt(x) * gh.x[j]);
            s += gh.w[j] * (h + std::log1p(std::exp(-2 * h)) - M_LN2);
        }
        return -0.5 * x + s;
    }
    return average_over_teacher(prior, [&](double w0, double xi) { return discrete_site(prior, x, w0, xi).logz; });
}

double overlap_update(const WeightPrior& prior, double xhat) {
    if (xhat < 0) throw std::domain_error("overlap_update: xhat must be non-negative");
    if (xhat == 0) return 0.0;
    if (prior.kind == WeightPrior::Kind::Gaussian) return xhat / (1 + xhat);
    if (prior.kind == WeightPrior::Kind::Rademacher) {
        const Rule& gh = gauss_hermite(200);
        double s = 0.0;
        for (std::size_t j = 0; j < gh.size(); ++j)
            if (gh.w[j] > 0) s += gh.w[j] * std::tanh(xhat + std::sqrt(xhat) * gh.x[j]);
        return s;
    }
    return average_over_teacher(prior, [&](double w0, double xi) { return w0 * discrete_site(prior, xhat, w0, xi).mean; });
}

double overlap_update_derivative(const WeightPrior& prior, double xhat) {
    if (xhat < 0) throw std::domain_error("overlap_update_derivative: xhat must be non-negative");
    if (prior.kind == WeightPrior::Kind::Gaussian) return 1.0 / ((1 + xhat) * (1 + xhat));
    // dQ/dx = E (1 - <w>^2)^2 type identity is prior-specific; use a centred difference
    double h = std::max(1e-6, 1e-4 * xhat);
    double lo = std::max(0.0, xhat - h);
    return (overlap_update(prior, xhat + h) - overlap_update(prior, lo)) / (xhat + h - lo);
}

double phi_out(const OutputChannel& ch, double K, double K_d) {
    if (K > K_d + 1e-12) throw std::domain_error("phi_out: K > K_d");
    if (ch.kind == OutputChannel::Kind::Gaussian) {
        double v = ch.delta + K_d - K;
        if (!(v > 0)) throw std::domain_error("phi_out: Delta + K_d - K <= 0");
        return -0.5 * std::log(2 * M_PI * M_E * v);
    }
    K = std::max(K, 0.0);
    const double sk = std::sqrt(K), su = std::sqrt(std::max(0.0, K_d - K));
    const Rule& gh = gauss_hermite(80);
    const double width = 8.0 * std::sqrt(K_d - K + ch.y_scale * ch.y_scale);
    const Rule& gl = gauss_legendre(40);
    double tot = 0.0;
    for (std::size_t i = 0; i < gh.size(); ++i) {
        if (gh.w[i] < 1e-300) continue;
        double center = sk * gh.x[i];
        // y on [center - width, center + width] with 16 panels
        const int panels = 16;
        double h = 2 * width / panels, acc = 0.0;
        for (int pnl = 0; pnl < panels; ++pnl) {
            double a = center - width + pnl * h;
            for (std::size_t j = 0; j < gl.size(); ++j) {
                double y = a + 0.5 * h * (1 + gl.x[j]);
                double z = 0.0;
                for (std::size_t k = 0; k < gh.size(); ++k)
                    if (gh.w[k] > 0) z += gh.w[k] * ch.density(y, center + su * gh.x[k]);
                if (z > 0) acc += 0.5 * h * gl.w[j] * z * std::log(z);
            }
        }
        tot += gh.w[i] * acc;
    }
    return tot;
}

double psi_structured(const SpectralDensity& rho_c, double x) {
    if (x < 0) throw std::domain_error("psi_structured: x must be non-negative");
    double neg = 0.0;
    for (std::size_t i = 0; i < rho_c.grid.size(); ++i)
        if (rho_c.grid[i] < 0) neg += rho_c.weights[i] * rho_c.density[i];
    for (auto& [loc, m] : rho_c.atoms)
        if (loc < 0) neg += m;
    if (neg > 1e-8) throw std::domain_error("psi_structured: density has negative support");
    return 0.5 * rho_c.integrate([x](double s) { return s > 0 ? x * s - std::log1p(x * s) : 0.0; });
}

}  // namespace rsmlp
