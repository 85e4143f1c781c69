#include "rsmlp/potentials.hpp"

#include "rsmlp/quadrature.hpp"

#include <gsl/gsl_spline.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>

namespace rsmlp {

std::string content_hash(const std::string& text) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
    return buf;
}

struct DenoisingPotential::Impl {
    gsl_spline* spline = nullptr;
    ~Impl() {
        if (spline) gsl_spline_free(spline);
    }
};

DenoisingPotential::DenoisingPotential(Kind kind, std::vector<double> x, std::vector<double> m, double eta,
                                       double gamma, std::shared_ptr<const SpectralModel> model)
    : impl_(std::make_unique<Impl>()), kind_(kind), x_(std::move(x)), m_(std::move(m)), eta_(eta),
      gamma_(gamma), model_(std::move(model)) {
    const std::size_t n = x_.size();
    if (n < 3 || m_.size() != n) throw std::invalid_argument("DenoisingPotential: need >= 3 nodes");
    std::vector<double> u(n), lm(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (!(m_[i] > 0)) throw NumericError("DenoisingPotential: non-positive mmse on the grid");
        u[i] = std::log(x_[i]);
        lm[i] = std::log(m_[i]);
    }
    impl_->spline = gsl_spline_alloc(gsl_interp_steffen, n);
    gsl_spline_init(impl_->spline, u.data(), lm.data(), n);
    // x mmse = C + D / x through the last two nodes
    double xa = x_[n - 2], xb = x_[n - 1], ya = xa * m_[n - 2], yb = xb * m_[n - 1];
    tail_d_ = (ya - yb) / (1.0 / xa - 1.0 / xb);
    tail_c_ = yb - tail_d_ / xb;
    cum_.assign(n, 0.0);
    cum_[0] = 0.5 * x_[0] * (1.0 + m_[0]);
    const Rule& gl = gauss_legendre(12);
    for (std::size_t i = 1; i < n; ++i) {
        double a = u[i - 1], b = u[i], s = 0.0;
        for (std::size_t j = 0; j < gl.size(); ++j) {
            double t = 0.5 * (a + b) + 0.5 * (b - a) * gl.x[j];
            s += gl.w[j] * std::exp(gsl_spline_eval(impl_->spline, t, nullptr) + t);
        }
        cum_[i] = cum_[i - 1] + 0.5 * (b - a) * s;
    }
}

DenoisingPotential::~DenoisingPotential() = default;

double DenoisingPotential::mmse(double x) const {
    if (x < 0) throw std::domain_error("mmse: negative SNR");
    if (x <= x_.front()) return 1.0 + (m_.front() - 1.0) * x / x_.front();
    if (x >= x_.back()) return tail_c_ / x + tail_d_ / (x * x);
    return std::exp(gsl_spline_eval(impl_->spline, std::log(x), nullptr));
}

double DenoisingPotential::dmmse(double x) const {
    if (x < 0) throw std::domain_error("dmmse: negative SNR");
    if (x <= x_.front()) return (m_.front() - 1.0) / x_.front();
    if (x >= x_.back()) return -tail_c_ / (x * x) - 2.0 * tail_d_ / (x * x * x);
    double u = std::log(x);
    return mmse(x) * gsl_spline_eval_deriv(impl_->spline, u, nullptr) / x;
}

double DenoisingPotential::integral(double x) const {
    if (x < 0) throw std::domain_error("iota: negative SNR");
    if (std::isinf(x)) return INFINITY;
    const double x0 = x_.front();
    if (x <= x0) return x - (1.0 - m_.front()) * x * x / (2.0 * x0);
    if (x >= x_.back()) {
        double xb = x_.back();
        return cum_.back() + tail_c_ * std::log(x / xb) - tail_d_ * (1.0 / x - 1.0 / xb);
    }
    std::size_t i = std::upper_bound(x_.begin(), x_.end(), x) - x_.begin() - 1;
    double a = std::log(x_[i]), b = std::log(x), s = 0.0;
    const Rule& gl = gauss_legendre(12);
    for (std::size_t j = 0; j < gl.size(); ++j) {
        double t = 0.5 * (a + b) + 0.5 * (b - a) * gl.x[j];
        s += gl.w[j] * std::exp(gsl_spline_eval(impl_->spline, t, nullptr) + t);
    }
    return cum_[i] + 0.5 * (b - a) * s;
}

double DenoisingPotential::iota(double x) const { return iota_factor() * integral(x); }

std::vector<double> DenoisingPotential::iota_values() const {
    std::vector<double> r(cum_.size());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = iota_factor() * cum_[i];
    return r;
}

double DenoisingPotential::inverse(double target, bool* saturated) const {
    if (saturated) *saturated = false;
    if (target > 1.0 + 1e-12) throw std::domain_error("mmse_inverse: target above mmse(0+)");
    if (target >= 1.0) return 0.0;
    const double x0 = x_.front();
    if (target >= m_.front()) return x0 * (1.0 - target) / (1.0 - m_.front());
    if (target <= m_.back()) {
        if (saturated) *saturated = true;
        if (target <= 0) return 1e300;
        return (tail_c_ + std::sqrt(tail_c_ * tail_c_ + 4.0 * tail_d_ * target)) / (2.0 * target);
    }
    std::size_t i = 0;
    while (i + 1 < m_.size() && m_[i + 1] > target) ++i;
    double lo = std::log(x_[i]), hi = std::log(x_[i + 1]), lt = std::log(target);
    for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
        double mid = 0.5 * (lo + hi);
        (gsl_spline_eval(impl_->spline, mid, nullptr) > lt ? lo : hi) = mid;
    }
    return std::exp(0.5 * (lo + hi));
}

double DenoisingPotential::direct_mmse(double x) const {
    if (kind_ == Kind::Symmetric) {
        ReadoutPrior pv = ReadoutPrior::atoms(model_->v, model_->p, "model");
        auto rho = symmetric_observation_density(gamma_, pv, x);
        return mmse_symmetric(x, rho);
    }
    return mmse_rectangular(x, eta_, gamma_, rectangular_density(x, eta_, gamma_));
}

namespace {

std::mutex memo_mutex;
std::map<std::string, std::shared_ptr<const DenoisingPotential>>& memo() {
    static std::map<std::string, std::shared_ptr<const DenoisingPotential>> m;
    return m;
}

std::string fmt(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.17g", v);
    return b;
}

std::vector<double> snr_nodes(const PotentialOptions& opt) {
    std::vector<double> x(opt.nodes);
    for (int i = 0; i < opt.nodes; ++i)
        x[i] = opt.x_min * std::pow(opt.x_max / opt.x_min, double(i) / (opt.nodes - 1));
    return x;
}

bool load_cache(const std::string& path, const std::string& key, std::vector<double>& x, std::vector<double>& m) {
    std::ifstream in(path);
    if (!in) return false;
    std::string header;
    std::getline(in, header);
    if (header != "# " + key) return false;
    x.clear();
    m.clear();
    double a, b;
    char comma;
    while (in >> a >> comma >> b) {
        x.push_back(a);
        m.push_back(b);
    }
    return x.size() >= 3;
}

void save_cache(const std::string& dir, const std::string& path, const std::string& key,
                const std::vector<double>& x, const std::vector<double>& m) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write potential cache " + path);
    out << "# " << key << "\n";
    for (std::size_t i = 0; i < x.size(); ++i) out << fmt(x[i]) << "," << fmt(m[i]) << "\n";
    if (!out) throw IoError("cannot write potential cache " + path);
}

template <class Compute, class Make>
std::shared_ptr<const DenoisingPotential> cached(const std::string& key, const PotentialOptions& opt,
                                                 Compute compute, Make make) {
    {
        std::lock_guard<std::mutex> lock(memo_mutex);
        auto it = memo().find(key);
        if (it != memo().end()) return it->second;
    }
    std::vector<double> x, m;
    std::string path;
    bool have = false;
    if (!opt.cache_dir.empty()) {
        path = (std::filesystem::path(opt.cache_dir) / (content_hash(key) + ".csv")).string();
        have = load_cache(path, key, x, m);
    }
    if (!have) {
        x = snr_nodes(opt);
        m.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) m[i] = compute(x[i]);
        for (std::size_t i = 1; i < m.size(); ++i)
            if (!(m[i] < m[i - 1])) throw NumericError("mmse not strictly decreasing at x = " + fmt(x[i]));
        if (!opt.cache_dir.empty()) save_cache(opt.cache_dir, path, key, x, m);
    }
    std::shared_ptr<const DenoisingPotential> p = make(std::move(x), std::move(m));
    std::lock_guard<std::mutex> lock(memo_mutex);
    return memo().emplace(key, p).first->second;
}

std::string grid_key(const PotentialOptions& opt) {
    return "|nodes=" + std::to_string(opt.nodes) + "|xmin=" + fmt(opt.x_min) + "|xmax=" + fmt(opt.x_max) +
           "|scan=" + std::to_string(opt.spectral.scan_points) +
           "|gl=" + std::to_string(opt.spectral.panel_order) + "|qtol=" + fmt(opt.spectral.quad_tol);
}

}  // namespace

struct PotentialFactory {
    static std::shared_ptr<const DenoisingPotential> finish(std::shared_ptr<DenoisingPotential> p,
                                                            const std::string& key) {
        p->key_ = key;
        return p;
    }
};

std::shared_ptr<const DenoisingPotential> DenoisingPotential::symmetric(double gamma, const ReadoutPrior& pv,
                                                                        const PotentialOptions& opt) {
    pv.validate();
    if (!(gamma > 0)) throw std::domain_error("symmetric potential: gamma must be positive");
    std::string key = "symmetric|gamma=" + fmt(gamma) + "|v=";
    for (double v : pv.values) key += fmt(v) + ";";
    key += "|p=";
    for (double p : pv.probs) key += fmt(p) + ";";
    key += grid_key(opt);
    auto model = std::make_shared<SpectralModel>();
    model->type = SpectralModel::Type::Symmetric;
    model->gamma = gamma;
    model->v = pv.values;
    model->p = pv.probs;
    model->a = 1.0;
    return cached(
        key, opt,
        [&](double x) { return mmse_symmetric(x, symmetric_observation_density(gamma, pv, x, opt.spectral)); },
        [&](std::vector<double> x, std::vector<double> m) {
            return PotentialFactory::finish(
                std::make_shared<DenoisingPotential>(Kind::Symmetric, std::move(x), std::move(m), 1.0, gamma, model),
                key);
        });
}

std::shared_ptr<const DenoisingPotential> DenoisingPotential::rectangular(double eta, double gamma,
                                                                          const PotentialOptions& opt) {
    if (!(gamma > 0) || !(eta > 0)) throw std::domain_error("rectangular potential: invalid parameters");
    std::string key = "rectangular|eta=" + fmt(eta) + "|gamma=" + fmt(gamma) + grid_key(opt);
    auto model = std::make_shared<SpectralModel>();
    model->type = SpectralModel::Type::Rectangular;
    model->gamma = gamma;
    model->eta = eta;
    return cached(
        key, opt,
        [&](double x) { return mmse_rectangular(x, eta, gamma, rectangular_density(x, eta, gamma, opt.spectral)); },
        [&](std::vector<double> x, std::vector<double> m) {
            return PotentialFactory::finish(
                std::make_shared<DenoisingPotential>(Kind::Rectangular, std::move(x), std::move(m), eta, gamma, model),
                key);
        });
}

}  // namespace rsmlp
