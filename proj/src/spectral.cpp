#include "rsmlp/spectral.hpp"

#include "rsmlp/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace rsmlp {

namespace {

const cplx I1(0.0, 1.0);

bool finite(cplx c) { return std::isfinite(c.real()) && std::isfinite(c.imag()); }

// Resolvent convention g(z) = E 1/(z - lambda), Im g < 0.
bool symmetric_newton(const SpectralModel& M, cplx z, cplx& G, double tol) {
    const double sg = std::sqrt(M.gamma), c = M.a / sg;
    cplx g = G;
    double last = INFINITY;
    for (int it = 0; it < 80; ++it) {
        cplx S = 0.0, dS = 0.0;
        for (std::size_t j = 0; j < M.v.size(); ++j) {
            if (M.v[j] == 0.0) continue;
            cplx den = 1.0 - c * M.v[j] * g;
            S += M.p[j] * M.v[j] / den;
            dS += M.p[j] * M.v[j] * c * M.v[j] / (den * den);
        }
        cplx D = z - M.b * M.b * g - M.a * sg * S;
        cplx dD = -M.b * M.b - M.a * sg * dS;
        cplx H = g * D - 1.0, dH = D + g * dD;
        cplx step = H / dH;
        g -= step;
        if (!finite(g)) return false;
        double st = std::abs(step);
        bool stalled = st < 1e-9 * (1.0 + std::abs(g)) && st > 0.5 * last;
        last = st;
        if (st <= tol * (1.0 + std::abs(g)) || stalled) {
            if (g.imag() > 1e-10 * std::abs(g)) return false;
            G = g;
            return true;
        }
    }
    return false;
}

cplx grid_resolvent(const SpectralDensity& s, cplx w, cplx* deriv) {
    cplx g = 0.0, dg = 0.0;
    for (std::size_t i = 0; i < s.grid.size(); ++i) {
        cplx r = 1.0 / (w - s.grid[i]);
        g += s.weights[i] * s.density[i] * r;
        dg -= s.weights[i] * s.density[i] * r * r;
    }
    for (auto& [loc, m] : s.atoms) {
        cplx r = 1.0 / (w - loc);
        g += m * r;
        dg -= m * r * r;
    }
    if (deriv) *deriv = dg;
    return g;
}

bool grid_newton(const SpectralModel& M, cplx z, cplx& G, double tol) {
    const double sx = M.a;
    cplx g = G;
    double last = INFINITY;
    for (int it = 0; it < 80; ++it) {
        cplx dgs;
        cplx w = (z - M.b * M.b * g) / sx;
        cplx gs = grid_resolvent(*M.base, w, &dgs);
        cplx H = g - gs / sx;
        cplx dH = 1.0 + dgs * M.b * M.b / (sx * sx);
        cplx step = H / dH;
        g -= step;
        if (!finite(g)) return false;
        double st = std::abs(step);
        bool stalled = st < 1e-9 * (1.0 + std::abs(g)) && st > 0.5 * last;
        last = st;
        if (st <= tol * (1.0 + std::abs(g)) || stalled) {
            if (g.imag() > 1e-10 * std::abs(g)) return false;
            G = g;
            return true;
        }
    }
    return false;
}

// Gram-matrix Stieltjes m = E 1/(lambda - z), Im m > 0; q is the MP transform at w(m).
struct RectState {
    cplx m, q;
};

bool rect_newton(const SpectralModel& M, cplx z, RectState& st, double tol) {
    const double y = 1.0 / M.gamma, ie = 1.0 / M.eta, x = M.x;
    RectState s = st;
    double last = INFINITY;
    for (int it = 0; it < 100; ++it) {
        cplx dm, dq = 0.0;
        if (x == 0.0) {
            cplx F = z * s.m + 1.0 - ie * s.m / (1.0 + s.m);
            cplx dF = z - ie / ((1.0 + s.m) * (1.0 + s.m));
            dm = F / dF;
        } else {
            cplx w = -(1.0 + s.m) / (x * s.m);
            cplx dw = 1.0 / (x * s.m * s.m);
            cplx F1 = z * s.m + 1.0 - ie + ie * s.q / (x * s.m);
            cplx a11 = z - ie * s.q / (x * s.m * s.m), a12 = ie / (x * s.m);
            cplx F2 = y * w * s.q * s.q + (w - 1.0 + y) * s.q + 1.0;
            cplx a21 = (y * s.q * s.q + s.q) * dw, a22 = 2.0 * y * w * s.q + (w - 1.0 + y);
            cplx det = a11 * a22 - a12 * a21;
            dm = (F1 * a22 - a12 * F2) / det;
            dq = (a11 * F2 - a21 * F1) / det;
        }
        s.m -= dm;
        s.q -= dq;
        if (!finite(s.m) || !finite(s.q)) return false;
        double sz = std::abs(dm) / (1.0 + std::abs(s.m)) + std::abs(dq) / (1.0 + std::abs(s.q));
        bool stalled = sz < 1e-9 && sz > 0.5 * last;
        last = sz;
        if (sz <= tol || stalled) {
            if (s.m.imag() < -1e-10 * std::abs(s.m)) return false;
            st = s;
            return true;
        }
    }
    return false;
}

double model_bound(const SpectralModel& M) {
    switch (M.type) {
        case SpectralModel::Type::Symmetric: {
            double vm = 0.0;
            for (double v : M.v) vm = std::max(vm, std::abs(v));
            double sg = std::sqrt(M.gamma);
            return M.a * vm / sg * (1 + sg) * (1 + sg) + 2.0 * M.b;
        }
        case SpectralModel::Type::Grid:
            return M.a * std::max(std::abs(M.base->lo()), std::abs(M.base->hi())) + 2.0 * M.b;
        case SpectralModel::Type::Rectangular: {
            double r = 1.0 + 1.0 / std::sqrt(M.gamma);
            double tmax = 1.0 + M.x * r * r;
            double e = 1.0 + 1.0 / std::sqrt(M.eta);
            return tmax * e * e;
        }
    }
    return 1.0;
}

template <class State, class Solve>
State continuation(double re, double eta_target, double eta0, State s, Solve solve,
                   const char* what) {
    double eta = eta0;
    if (!solve(cplx(re, eta), s)) throw ConvergenceError(std::string(what) + ": no start", 1.0);
    double ratio = 0.2;
    while (eta > eta_target) {
        double next = std::max(eta_target, eta * ratio);
        State t = s;
        if (solve(cplx(re, next), t)) {
            s = t;
            eta = next;
            ratio = std::max(0.05, ratio * ratio);
        } else {
            ratio = std::sqrt(ratio);
            if (ratio > 0.999 && eta < 1e-8) return s;
            if (ratio > 0.999) throw ConvergenceError(std::string(what) + ": continuation stalled", eta);
        }
    }
    return s;
}

double symmetric_atom(const SpectralModel& M) {
    if (M.type != SpectralModel::Type::Symmetric || M.b != 0.0) return 0.0;
    if (M.a == 0.0) return 1.0;
    double pz = 0.0;
    for (std::size_t j = 0; j < M.v.size(); ++j)
        if (M.v[j] != 0.0) pz += M.p[j];
    return std::max(0.0, 1.0 - M.gamma * pz);
}

// Adaptive composite Gauss-Legendre in theta, y = (a+b)/2 - (b-a)/2 cos(theta).
void fill_interval(SpectralDensity& s, double a, double b, const SpectralOptions& opt,
                   const std::function<double(double)>& rho) {
    const Rule& gl = gauss_legendre(opt.panel_order);
    const double c = 0.5 * (a + b), r = 0.5 * (b - a);
    struct Panel {
        double t0, t1;
        std::vector<double> y, w, f;
        double i1, i3;
    };
    auto make = [&](double t0, double t1) {
        Panel p{t0, t1, {}, {}, {}, 0.0, 0.0};
        double h = 0.5 * (t1 - t0);
        for (std::size_t j = 0; j < gl.size(); ++j) {
            double t = t0 + h * (1.0 + gl.x[j]);
            double y = c - r * std::cos(t);
            double f = std::max(0.0, rho(y));
            double w = h * gl.w[j] * r * std::sin(t);
            p.y.push_back(y);
            p.w.push_back(w);
            p.f.push_back(f);
            p.i1 += w * f;
            p.i3 += w * f * f * f;
        }
        return p;
    };
    std::vector<Panel> todo, done;
    const int n0 = 8;
    for (int k = 0; k < n0; ++k) todo.push_back(make(M_PI * k / n0, M_PI * (k + 1) / n0));
    double scale3 = 0.0;
    for (auto& p : todo)
        for (double f : p.f) scale3 = std::max(scale3, f * f);
    while (!todo.empty()) {
        Panel p = std::move(todo.back());
        todo.pop_back();
        double tm = 0.5 * (p.t0 + p.t1);
        Panel L = make(p.t0, tm), R = make(tm, p.t1);
        double e1 = std::abs(L.i1 + R.i1 - p.i1);
        double e3 = std::abs(L.i3 + R.i3 - p.i3) / std::max(scale3, 1e-300);
        double allowed = opt.quad_tol * (p.t1 - p.t0) / M_PI;
        if ((e1 <= allowed && e3 <= allowed) || p.t1 - p.t0 < 1e-12) {
            done.push_back(std::move(L));
            done.push_back(std::move(R));
        } else {
            todo.push_back(std::move(L));
            todo.push_back(std::move(R));
        }
    }
    std::sort(done.begin(), done.end(), [](const Panel& u, const Panel& v) { return u.t0 < v.t0; });
    for (auto& p : done)
        for (std::size_t j = 0; j < p.y.size(); ++j) {
            s.grid.push_back(p.y[j]);
            s.weights.push_back(p.w[j]);
            s.density.push_back(p.f[j]);
        }
    s.support.emplace_back(a, b);
}

}  // namespace

cplx SpectralModel::stieltjes(cplx z, const SpectralOptions& opt) const {
    const double eta_t = std::max(z.imag(), opt.eta_min);
    const double eta0 = std::max(eta_t, 2.0 * model_bound(*this) + 2.0);
    const double re = z.real();
    if (type == Type::Rectangular) {
        cplx z0(re, eta0);
        RectState s{-1.0 / z0, 0.0};
        if (x > 0) {
            cplx w = -(1.0 + s.m) / (x * s.m);
            s.q = -1.0 / w;
        }
        auto solve = [&](cplx zz, RectState& st) { return rect_newton(*this, zz, st, opt.tol); };
        return continuation(re, eta_t, eta0, s, solve, "rectangular Stieltjes").m;
    }
    cplx G0 = 1.0 / cplx(re, eta0);
    cplx G;
    if (type == Type::Symmetric) {
        auto solve = [&](cplx zz, cplx& g) { return symmetric_newton(*this, zz, g, opt.tol); };
        G = continuation(re, eta_t, eta0, G0, solve, "symmetric Stieltjes");
    } else {
        auto solve = [&](cplx zz, cplx& g) { return grid_newton(*this, zz, g, opt.tol); };
        G = continuation(re, eta_t, eta0, G0, solve, "subordination");
    }
    return -G;
}

double SpectralModel::signal_variance() const {
    if (type == Type::Rectangular) return 1.0;
    if (type == Type::Symmetric) {
        double m2 = 0.0;
        for (std::size_t j = 0; j < v.size(); ++j) m2 += p[j] * v[j] * v[j];
        return m2;
    }
    double m1 = base->moment(1), m2 = base->moment(2);
    return m2 - m1 * m1;
}

double SpectralDensity::lo() const {
    double l = INFINITY;
    if (!support.empty()) l = support.front().first;
    for (auto& a : atoms) l = std::min(l, a.first);
    return l;
}

double SpectralDensity::hi() const {
    double h = -INFINITY;
    if (!support.empty()) h = support.back().second;
    for (auto& a : atoms) h = std::max(h, a.first);
    return h;
}

double SpectralDensity::integrate(const std::function<double(double)>& f) const {
    double s = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) s += weights[i] * density[i] * f(grid[i]);
    for (auto& [loc, m] : atoms) s += m * f(loc);
    return s;
}

double SpectralDensity::mass() const {
    return integrate([](double) { return 1.0; });
}

double SpectralDensity::moment(int k) const {
    return integrate([k](double y) { return std::pow(y, k); });
}

double SpectralDensity::cubic_integral() const {
    double s = 0.0;
    for (std::size_t i = 0; i < grid.size(); ++i) s += weights[i] * density[i] * density[i] * density[i];
    return s;
}

double SpectralDensity::cdf(double t) const {
    double c = 0.0;
    for (auto& [loc, m] : atoms)
        if (loc <= t) c += m;
    for (std::size_t i = 0; i < grid.size(); ++i)
        if (grid[i] <= t) c += weights[i] * density[i];
    return std::clamp(c, 0.0, 1.0);
}

double SpectralDensity::kolmogorov_distance(std::vector<double> samples) const {
    std::sort(samples.begin(), samples.end());
    const double n = samples.size();
    double D = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        double F = cdf(samples[i]);
        D = std::max({D, std::abs(F - i / n), std::abs(F - (i + 1) / n)});
    }
    return D;
}

SpectralDensity build_density(const std::function<double(double)>& rho, double lo, double hi,
                              const SpectralOptions& opt, SpectralDensity::Kind kind) {
    int npts = opt.scan_points;
    SpectralDensity out;
    for (int attempt = 0; attempt < 3; ++attempt, npts *= 2) {
        const double h = (hi - lo) / npts;
        std::vector<double> ys(npts), rs(npts);
        double rmax = 0.0;
        for (int j = 0; j < npts; ++j) {
            ys[j] = lo + (j + 0.5) * h;
            rs[j] = rho(ys[j]);
            rmax = std::max(rmax, rs[j]);
        }
        if (rmax <= 0.0) return out;
        const double thr = 1e-10 * rmax;
        auto inside = [&](double y) { return rho(y) > thr; };
        auto edge = [&](double out_pt, double in_pt) {
            for (int it = 0; it < 60 && std::abs(in_pt - out_pt) > 1e-15 * (1 + std::abs(in_pt)); ++it) {
                double mid = 0.5 * (out_pt + in_pt);
                (inside(mid) ? in_pt : out_pt) = mid;
            }
            return 0.5 * (in_pt + out_pt);
        };
        SpectralDensity s;
        s.kind = kind;
        int j = 0;
        while (j < npts) {
            if (rs[j] <= thr) {
                ++j;
                continue;
            }
            int j1 = j;
            while (j1 + 1 < npts && rs[j1 + 1] > thr) ++j1;
            double a = edge(j == 0 ? lo : ys[j - 1], ys[j]);
            double b = edge(j1 + 1 == npts ? hi : ys[j1 + 1], ys[j1]);
            fill_interval(s, a, b, opt, rho);
            j = j1 + 1;
        }
        out = std::move(s);
        return out;
    }
    return out;
}

namespace {

SpectralDensity density_from_model(std::shared_ptr<const SpectralModel> M, const SpectralOptions& opt) {
    double B = model_bound(*M) * 1.02 + 0.05;
    double m0 = symmetric_atom(*M);
    SpectralDensity s;
    if (M->type == SpectralModel::Type::Rectangular) {
        auto rho = [&](double sv) {
            if (sv <= 0) return 0.0;
            cplx m = M->stieltjes(cplx(sv * sv, 0.0), opt);
            return 2.0 * sv * std::max(0.0, m.imag()) / M_PI;
        };
        s = build_density(rho, 0.0, std::sqrt(B), opt, SpectralDensity::Kind::SingularValue);
    } else {
        auto rho = [&](double y) {
            cplx m = M->stieltjes(cplx(y, 0.0), opt);
            if (m0 > 0) m += m0 / cplx(y, opt.eta_min);
            return std::max(0.0, m.imag()) / M_PI;
        };
        s = build_density(rho, -B, B, opt, SpectralDensity::Kind::Eigenvalue);
        if (m0 > 0) s.atoms.emplace_back(0.0, m0);
    }
    s.model = std::move(M);
    double mass = s.mass();
    if (std::abs(mass - 1.0) > 1e-6)
        throw ConvergenceError("spectral density not normalised", std::abs(mass - 1.0));
    return s;
}

std::shared_ptr<SpectralModel> symmetric_model(double gamma, const ReadoutPrior& pv, double a, double b) {
    if (!(gamma > 0)) throw std::domain_error("spectral: gamma must be positive");
    pv.validate();
    auto M = std::make_shared<SpectralModel>();
    M->type = SpectralModel::Type::Symmetric;
    M->gamma = gamma;
    M->v = pv.values;
    M->p = pv.probs;
    M->a = a;
    M->b = b;
    return M;
}

}  // namespace

SpectralDensity generalized_mp_density(double gamma, const ReadoutPrior& pv, const SpectralOptions& opt) {
    return density_from_model(symmetric_model(gamma, pv, 1.0, 0.0), opt);
}

SpectralDensity symmetric_observation_density(double gamma, const ReadoutPrior& pv, double x,
                                              const SpectralOptions& opt) {
    if (x < 0) throw std::domain_error("free_additive_semicircle: x must be non-negative");
    return density_from_model(symmetric_model(gamma, pv, std::sqrt(x), 1.0), opt);
}

SpectralDensity free_additive_semicircle(const SpectralDensity& signal, double x, const SpectralOptions& opt) {
    if (x < 0) throw std::domain_error("free_additive_semicircle: x must be non-negative");
    if (signal.model && signal.model->type == SpectralModel::Type::Symmetric && signal.model->b == 0.0) {
        auto M = std::make_shared<SpectralModel>(*signal.model);
        M->a = signal.model->a * std::sqrt(x);
        M->b = 1.0;
        return density_from_model(M, opt);
    }
    auto M = std::make_shared<SpectralModel>();
    if (x == 0.0) {
        M->type = SpectralModel::Type::Symmetric;
        M->a = 0.0;
        M->b = 1.0;
        return density_from_model(M, opt);
    }
    M->type = SpectralModel::Type::Grid;
    M->a = std::sqrt(x);
    M->b = 1.0;
    M->base = std::make_shared<SpectralDensity>(signal);
    return density_from_model(M, opt);
}

double mmse_symmetric(double x, const SpectralDensity& rho_y) {
    if (!(x > 0)) throw std::domain_error("mmse_symmetric: x must be positive");
    double m = (1.0 - 4.0 * M_PI * M_PI / 3.0 * rho_y.cubic_integral()) / x;
    double cap = rho_y.model ? rho_y.model->signal_variance() : INFINITY;
    return std::clamp(m, 0.0, cap);
}

SpectralDensity rectangular_density(double x, double eta, double gamma, const SpectralOptions& opt) {
    if (x < 0 || !(eta > 0) || !(gamma > 0)) throw std::domain_error("rectangular_density: invalid parameters");
    if (eta > 1.0) throw std::domain_error("rectangular_density: eta > 1 is not supported");
    auto M = std::make_shared<SpectralModel>();
    M->type = SpectralModel::Type::Rectangular;
    M->x = x;
    M->eta = eta;
    M->gamma = gamma;
    return density_from_model(M, opt);
}

double mmse_rectangular(double x, double eta, double /*gamma*/, const SpectralDensity& rho_y) {
    if (!(x > 0)) throw std::domain_error("mmse_rectangular: x must be positive");
    double inv2 = 0.0;
    if (eta != 1.0) {
        for (std::size_t i = 0; i < rho_y.grid.size(); ++i)
            if (rho_y.grid[i] > 0) inv2 += rho_y.weights[i] * rho_y.density[i] / (rho_y.grid[i] * rho_y.grid[i]);
    }
    double k = 1.0 / eta - 1.0;
    double m = (1.0 - eta * k * k * inv2 - M_PI * M_PI * eta / 3.0 * rho_y.cubic_integral()) / x;
    return std::clamp(m, 0.0, 1.0);
}

SpectralDensity marchenko_pastur_density(double ratio, const SpectralOptions& opt) {
    if (!(ratio > 0)) throw std::domain_error("marchenko_pastur_density: ratio must be positive");
    double a = (1 - std::sqrt(ratio)) * (1 - std::sqrt(ratio)), b = (1 + std::sqrt(ratio)) * (1 + std::sqrt(ratio));
    SpectralDensity s;
    fill_interval(s, a, b, opt, [&](double l) {
        return std::sqrt(std::max(0.0, (b - l) * (l - a))) / (2 * M_PI * ratio * l);
    });
    if (ratio > 1) s.atoms.emplace_back(0.0, 1.0 - 1.0 / ratio);
    return s;
}

}  // namespace rsmlp
