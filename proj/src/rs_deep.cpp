#include "rsmlp/rs_deep.hpp"

#include "rsmlp/errors.hpp"
#include "rsmlp/fixed_point.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace rsmlp {

std::string l2_seed_name(L2Seed s) {
    switch (s) {
        case L2Seed::Universal: return "universal";
        case L2Seed::ProductOnly: return "product-only";
        case L2Seed::FirstLayerOnly: return "first-layer-only";
        case L2Seed::PartialFirstLayer: return "partial-first-layer";
        default: return "full";
    }
}

namespace {

double mean_of(const std::vector<double>& x) {
    double s = 0;
    for (double v : x) s += v;
    return x.empty() ? 0.0 : s / x.size();
}

void require_normalised(const ActivationSpec& a, bool no_linear) {
    if (std::abs(a.mu(0)) > 1e-8 || std::abs(a.mu(2)) > 1e-8)
        throw std::domain_error("deep activation " + a.name + ": mu0 and mu2 must vanish");
    if (no_linear && std::abs(a.mu(1)) > 1e-8)
        throw std::domain_error("deep activation " + a.name + ": mu1 must vanish for L >= 3");
    if (std::abs(a.second_moment - 1.0) > 1e-6)
        throw std::domain_error("deep activation " + a.name + ": E sigma^2 must equal 1");
}

void finite_or_throw(double x, const char* eq) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in the ") + eq + " update");
}

// D / (-mmse'(tau)) with D = mmse(tau) - mmse(tau + h); h in the 1/x tail gives h
double tau_ratio(const DenoisingPotential& pot, double tau, double h) {
    double dm = pot.dmmse(tau);
    if (tau >= 1e300 || dm == 0.0) return h;
    return (pot.mmse(tau) - pot.mmse(tau + h)) / -dm;
}

struct L2Ctx {
    const L2Inputs& in;
    std::shared_ptr<const GTable> g1, g2;
    std::vector<std::shared_ptr<const DenoisingPotential>> pot;  // per v bin
    double m1a, m1b;
    std::size_t nb, nb2;

    L2Ctx(const L2Inputs& i, const SolverConfig& cfg)
        : in(i), g1(shared_gtable(i.act1)), g2(shared_gtable(i.act2)), m1a(i.act1.mu(1)), m1b(i.act2.mu(1)),
          nb(i.pv.size()), nb2(i.pv2.size()) {
        require_normalised(i.act1, false);
        require_normalised(i.act2, false);
        if (!(i.alpha > 0) || !(i.gamma1 > 0) || !(i.gamma2 > 0)) throw std::domain_error("L=2: alpha, gammas must be positive");
        i.pv.validate();
        i.pv2.validate();
        std::map<double, std::shared_ptr<const DenoisingPotential>> by_eta;
        for (std::size_t k = 0; k < nb; ++k) {
            double eta = std::max(1e-3, i.gamma2 * i.pv.probs[k]);
            if (eta > 1.0) throw std::domain_error("L=2: gamma2 P_v(v) > 1 is not supported");
            auto it = by_eta.find(eta);
            if (it == by_eta.end()) it = by_eta.emplace(eta, DenoisingPotential::rectangular(eta, i.gamma1, cfg.potentials)).first;
            pot.push_back(it->second);
        }
    }

    std::size_t size() const { return nb2 + nb * nb2 + nb; }
    std::vector<double> pack(const OrderParamsL2& p) const {
        std::vector<double> x(p.Q1);
        x.insert(x.end(), p.Q2.begin(), p.Q2.end());
        x.insert(x.end(), p.Q21.begin(), p.Q21.end());
        return x;
    }
    OrderParamsL2 unpack(const std::vector<double>& x) const {
        OrderParamsL2 p;
        p.Q1.assign(x.begin(), x.begin() + nb2);
        p.Q2.assign(x.begin() + nb2, x.begin() + nb2 + nb * nb2);
        p.Q21.assign(x.begin() + nb2 + nb * nb2, x.end());
        return p;
    }

    std::vector<double> inner(const OrderParamsL2& p) const {
        std::vector<double> u(nb);
        for (std::size_t i = 0; i < nb; ++i) {
            double s = m1a * m1a * p.Q21[i];
            for (std::size_t j = 0; j < nb2; ++j) s += in.pv2.probs[j] * p.q2(i, j) * g1->g(p.Q1[j]);
            u[i] = s;
        }
        return u;
    }
    double cov(const OrderParamsL2& p) const {
        auto u = inner(p);
        double K = m1a * m1a * m1b * m1b;
        for (std::size_t j = 0; j < nb2; ++j)
            K += m1b * m1b * in.pv2.probs[j] * in.pv2.values[j] * in.pv2.values[j] * g1->g(p.Q1[j]);
        for (std::size_t i = 0; i < nb; ++i) K += in.pv.probs[i] * in.pv.values[i] * in.pv.values[i] * g2->g(u[i]);
        return K;
    }
    // g'(x) with g'(0) = 0 pinned
    static double dg(const GTable& t, double x) { return x == 0.0 ? 0.0 : t.dg(x); }

    // hats, tau and the updated overlaps at p
    OrderParamsL2 map(const OrderParamsL2& p) const {
        OrderParamsL2 n = p;
        const double a = in.alpha, G1 = in.gamma1, G2 = in.gamma2;
        auto u = inner(p);
        double K = cov(p);
        double A = phi_out_slope(in.channel, K, 1.0);
        finite_or_throw(A, "phi_out slope");
        n.tau.assign(nb, 0.0);
        n.Q21_hat.assign(nb, 0.0);
        std::vector<double> ratio(nb, 0.0), g2p(nb);
        for (std::size_t i = 0; i < nb; ++i) {
            double M = 0;
            for (std::size_t j = 0; j < nb2; ++j) M += in.pv2.probs[j] * p.q2(i, j) * p.Q1[j];
            n.tau[i] = M > 0 ? pot[i]->inverse(std::max(0.0, 1.0 - M)) : 0.0;
            finite_or_throw(n.tau[i], "tau");
            double v2 = in.pv.values[i] * in.pv.values[i];
            g2p[i] = dg(*g2, u[i]);
            double h21 = a / G2 * A * m1a * m1a * v2 * g2p[i];
            finite_or_throw(h21, "Q21_hat");
            n.Q21_hat[i] = std::max(0.0, h21);
            ratio[i] = tau_ratio(*pot[i], n.tau[i], n.Q21_hat[i]);
            n.Q21[i] = 1.0 - pot[i]->mmse(n.tau[i] + n.Q21_hat[i]);
        }
        n.Q1_hat.assign(nb2, 0.0);
        n.Q2_hat.assign(nb * nb2, 0.0);
        for (std::size_t j = 0; j < nb2; ++j) {
            double w2 = in.pv2.values[j] * in.pv2.values[j];
            double g1p = dg(*g1, p.Q1[j]), g1v = g1->g(p.Q1[j]);
            double back = 0, coup = 0;
            for (std::size_t i = 0; i < nb; ++i) {
                double v2 = in.pv.values[i] * in.pv.values[i];
                back += in.pv.probs[i] * v2 * g2p[i] * p.q2(i, j);
                coup += in.pv.probs[i] * ratio[i] * p.q2(i, j);
                double h2 = a / (G1 * G2) * A * v2 * g2p[i] * g1v + ratio[i] * p.Q1[j] / G1;
                finite_or_throw(h2, "Q2_hat");
                n.Q2_hat[i * nb2 + j] = std::max(0.0, h2);
                n.Q2[i * nb2 + j] = overlap_update(in.prior2, n.Q2_hat[i * nb2 + j]);
            }
            double h1 = a / G1 * A * g1p * (m1b * m1b * w2 + back) + G2 / G1 * coup;
            finite_or_throw(h1, "Q1_hat");
            n.Q1_hat[j] = std::max(0.0, h1);
            n.Q1[j] = overlap_update(in.prior1, n.Q1_hat[j]);
        }
        return n;
    }
};

}  // namespace

double L2Solution::mean_Q1() const { return mean_of(params.Q1); }
double L2Solution::mean_Q2() const { return mean_of(params.Q2); }
double L2Solution::mean_Q21() const { return mean_of(params.Q21); }

Covariance covariance_K_l2(const ActivationSpec& act1, const ActivationSpec& act2, const ReadoutPrior& pv,
                           const ReadoutPrior& pv2, const OrderParamsL2& p) {
    require_normalised(act1, false);
    require_normalised(act2, false);
    if (p.Q1.size() != pv2.size() || p.Q21.size() != pv.size() || p.Q2.size() != pv.size() * pv2.size())
        throw std::invalid_argument("covariance_K_l2: order parameter shapes do not match the readout laws");
    auto g1 = shared_gtable(act1), g2 = shared_gtable(act2);
    const double m1a = act1.mu(1), m1b = act2.mu(1);
    double K = m1a * m1a * m1b * m1b;
    for (std::size_t j = 0; j < pv2.size(); ++j) K += m1b * m1b * pv2.probs[j] * pv2.values[j] * pv2.values[j] * g1->g(p.Q1[j]);
    for (std::size_t i = 0; i < pv.size(); ++i) {
        double u = m1a * m1a * p.Q21[i];
        for (std::size_t j = 0; j < pv2.size(); ++j) u += pv2.probs[j] * p.q2(i, j) * g1->g(p.Q1[j]);
        K += pv.probs[i] * pv.values[i] * pv.values[i] * g2->g(u);
    }
    return {K, 1.0};
}

OrderParamsL2 seed_l2(const L2Inputs& in, const L2SeedSpec& seed, double c) {
    const std::size_t nb = in.pv.size(), nb2 = in.pv2.size();
    OrderParamsL2 p;
    p.Q1.assign(nb2, 0.0);
    p.Q2.assign(nb * nb2, 0.0);
    p.Q21.assign(nb, 0.0);
    switch (seed.kind) {
        case L2Seed::Universal: break;
        case L2Seed::ProductOnly: std::fill(p.Q21.begin(), p.Q21.end(), c); break;
        case L2Seed::FirstLayerOnly: std::fill(p.Q1.begin(), p.Q1.end(), c); break;
        case L2Seed::PartialFirstLayer:
            for (std::size_t j = 0; j < nb2; ++j)
                if (std::abs(in.pv2.values[j]) >= seed.threshold) p.Q1[j] = c;
            break;
        case L2Seed::Full:
            std::fill(p.Q1.begin(), p.Q1.end(), c);
            std::fill(p.Q2.begin(), p.Q2.end(), c);
            std::fill(p.Q21.begin(), p.Q21.end(), c);
            break;
    }
    return p;
}

OrderParamsL2 saddle_map_l2(const OrderParamsL2& p, const L2Inputs& in, const SolverConfig& cfg) {
    L2Ctx c(in, cfg);
    return c.map(p);
}

double saddle_residual_l2(const OrderParamsL2& p, const L2Inputs& in, const SolverConfig& cfg) {
    L2Ctx c(in, cfg);
    OrderParamsL2 n = c.map(p);
    double r = 0;
    auto cmp = [&r](const std::vector<double>& a, const std::vector<double>& b, bool rel) {
        if (a.size() != b.size()) {
            r = INFINITY;
            return;
        }
        for (std::size_t k = 0; k < a.size(); ++k) r = std::max(r, std::abs(a[k] - b[k]) / (rel ? std::max(1.0, std::abs(b[k])) : 1.0));
    };
    cmp(n.Q1, p.Q1, false);
    cmp(n.Q2, p.Q2, false);
    cmp(n.Q21, p.Q21, false);
    cmp(n.Q1_hat, p.Q1_hat, true);
    cmp(n.Q2_hat, p.Q2_hat, true);
    cmp(n.Q21_hat, p.Q21_hat, true);
    return r;
}

double free_entropy_l2(const OrderParamsL2& p, const L2Inputs& in, const SolverConfig& cfg) {
    L2Ctx c(in, cfg);
    const double a = in.alpha;
    double f = phi_out(in.channel, c.cov(p), 1.0);
    double e1 = 0, e2 = 0, e21 = 0;
    for (std::size_t j = 0; j < c.nb2; ++j)
        e1 += in.pv2.probs[j] * (psi_prior(in.prior1, p.Q1_hat[j]) - 0.5 * p.Q1[j] * p.Q1_hat[j]);
    for (std::size_t i = 0; i < c.nb; ++i) {
        for (std::size_t j = 0; j < c.nb2; ++j) {
            std::size_t k = i * c.nb2 + j;
            e2 += in.pv.probs[i] * in.pv2.probs[j] * (psi_prior(in.prior2, p.Q2_hat[k]) - 0.5 * p.Q2[k] * p.Q2_hat[k]);
        }
        e21 += in.pv.probs[i] * (0.5 * p.Q21_hat[i] * (1 - p.Q21[i]) - c.pot[i]->iota(p.tau[i] + p.Q21_hat[i]) +
                                 c.pot[i]->iota(p.tau[i]));
    }
    return f + in.gamma1 / a * e1 + in.gamma1 * in.gamma2 / a * e2 + in.gamma2 / a * e21;
}

L2Solution iterate_l2_from(const L2Inputs& in, const OrderParamsL2& start, const SolverConfig& cfg) {
    L2Ctx c(in, cfg);
    FixedPointResult fp = damped_fixed_point(
        c.pack(start), [&](const std::vector<double>& x) { return c.pack(c.map(c.unpack(x))); }, cfg.damping,
        cfg.tol, cfg.max_iter);
    if (!fp.converged) {
        // slow spiral near the transition: continue with heavy damping
        double damp = std::max(cfg.damping, 0.9);
        FixedPointResult again = damped_fixed_point(
            fp.x, [&](const std::vector<double>& x) { return c.pack(c.map(c.unpack(x))); }, damp, cfg.tol,
            2 * cfg.max_iter);
        again.iterations += fp.iterations;
        fp = std::move(again);
    }
    L2Solution s;
    OrderParamsL2 at = c.unpack(fp.x);
    s.params = c.map(at);
    s.params.Q1 = at.Q1;
    s.params.Q2 = at.Q2;
    s.params.Q21 = at.Q21;
    s.K = c.cov(at);
    s.eps = std::max(0.0, 1.0 - s.K);
    s.converged = fp.converged;
    s.iterations = fp.iterations;
    s.residual = fp.residual;
    s.free_entropy = free_entropy_l2(s.params, in, cfg);
    return s;
}

L2Solution iterate_l2(const L2Inputs& in, const L2SeedSpec& seed, const SolverConfig& cfg) {
    L2Solution s = iterate_l2_from(in, seed_l2(in, seed, cfg.seed_overlap), cfg);
    s.seed = seed;
    return s;
}

std::vector<L2SeedSpec> default_seeds_l2(const L2Inputs& in) {
    std::vector<L2SeedSpec> s{{L2Seed::Universal, 0}, {L2Seed::ProductOnly, 0}, {L2Seed::FirstLayerOnly, 0},
                              {L2Seed::Full, 0}};
    double top = 0;
    for (double v : in.pv2.values) top = std::max(top, std::abs(v));
    if (in.pv2.size() > 1) s.push_back({L2Seed::PartialFirstLayer, 0.5 * top});
    return s;
}

std::vector<L2Solution> solve_all_l2(const L2Inputs& in, const SolverConfig& cfg) {
    std::vector<L2Solution> out;
    for (const auto& s : default_seeds_l2(in)) out.push_back(iterate_l2(in, s, cfg));
    return out;
}

L2Solution select_l2(const std::vector<L2Solution>& sols) {
    const L2Solution* best = nullptr;
    auto mass = [](const L2Solution& s) { return s.mean_Q1() + s.mean_Q2() + s.mean_Q21(); };
    for (const auto& s : sols) {
        if (!s.converged) continue;
        if (!best || s.free_entropy > best->free_entropy + 1e-12 ||
            (std::abs(s.free_entropy - best->free_entropy) <= 1e-12 && mass(s) > mass(*best)))
            best = &s;
    }
    if (!best) throw ConvergenceError("select_l2: no converged solution", INFINITY);
    return *best;
}

double l2_transition_alpha(L2Inputs in, const std::vector<double>& grid, double level, const SolverConfig& cfg) {
    if (grid.size() < 2) throw std::invalid_argument("l2_transition_alpha: need at least two grid points");
    double pa = 0, pq = 0;
    for (std::size_t k = 0; k < grid.size(); ++k) {
        in.alpha = grid[k];
        double q = select_l2(solve_all_l2(in, cfg)).mean_Q1();
        if (q >= level) return k == 0 ? grid[0] : pa + (level - pq) / (q - pq) * (grid[k] - pa);
        pa = grid[k];
        pq = q;
    }
    return NAN;
}

// ---- deep ----

namespace {

struct Chain {
    std::vector<double> a, c;  // a_l = Q_l c_{l-1}, c_l = g(a_l), c_0 = 1
    std::vector<double> aL;    // per readout atom
};

Chain forward(const GTable& g, const OrderParamsDeep& p) {
    Chain ch;
    double c = 1.0;
    ch.c.push_back(c);
    for (double q : p.Q) {
        ch.a.push_back(q * c);
        c = g.g(q * c);
        ch.c.push_back(c);
    }
    for (double q : p.QL) ch.aL.push_back(q * c);
    return ch;
}

void check_deep(const DeepInputs& in) {
    if (in.depth() < 1) throw std::domain_error("deep: need at least one layer");
    for (double g : in.gammas)
        if (!(g > 0)) throw std::domain_error("deep: gammas must be positive");
    if (!(in.alpha > 0)) throw std::domain_error("deep: alpha must be positive");
    require_normalised(in.act, true);
    in.pv.validate();
}

double gamma_at(const DeepInputs& in, int l) { return l == 0 ? 1.0 : in.gammas[l - 1]; }

// updated overlaps with hats at p
OrderParamsDeep deep_map(const DeepInputs& in, const GTable& g, const OrderParamsDeep& p) {
    const int L = in.depth();
    Chain ch = forward(g, p);
    double K = 0;
    for (std::size_t i = 0; i < p.QL.size(); ++i) K += in.pv.probs[i] * in.pv.values[i] * in.pv.values[i] * g.g(ch.aL[i]);
    double A = phi_out_slope(in.channel, K, 1.0);
    auto dg = [&g](double x) { return x == 0.0 ? 0.0 : g.dg(x); };
    OrderParamsDeep n = p;
    n.QL_hat.resize(p.QL.size());
    double dc = 0;  // dK / dc_{L-1}
    for (std::size_t i = 0; i < p.QL.size(); ++i) {
        double b = in.pv.probs[i] * in.pv.values[i] * in.pv.values[i] * dg(ch.aL[i]);
        dc += b * p.QL[i];
        double h = in.alpha / (gamma_at(in, L - 1) * gamma_at(in, L)) * A * in.pv.values[i] * in.pv.values[i] *
                   dg(ch.aL[i]) * ch.c[L - 1];
        finite_or_throw(h, "Q_L hat");
        n.QL_hat[i] = std::max(0.0, h);
        n.QL[i] = overlap_update(in.prior, n.QL_hat[i]);
    }
    n.Q_hat.assign(p.Q.size(), 0.0);
    for (int l = L - 1; l >= 1; --l) {
        double da = dc * dg(ch.a[l - 1]);  // dK / da_l
        double h = in.alpha / (gamma_at(in, l - 1) * gamma_at(in, l)) * A * da * ch.c[l - 1];
        finite_or_throw(h, "Q_l hat");
        n.Q_hat[l - 1] = std::max(0.0, h);
        n.Q[l - 1] = overlap_update(in.prior, n.Q_hat[l - 1]);
        dc = da * p.Q[l - 1];
    }
    return n;
}

}  // namespace

Covariance covariance_K_deep(const ActivationSpec& act, const ReadoutPrior& pv, const OrderParamsDeep& p) {
    require_normalised(act, true);
    if (p.QL.size() != pv.size()) throw std::invalid_argument("covariance_K_deep: QL does not match the readout law");
    auto g = shared_gtable(act);
    Chain ch = forward(*g, p);
    double K = 0;
    for (std::size_t i = 0; i < pv.size(); ++i) K += pv.probs[i] * pv.values[i] * pv.values[i] * g->g(ch.aL[i]);
    return {K, 1.0};
}

double free_entropy_deep(const OrderParamsDeep& p, const DeepInputs& in) {
    check_deep(in);
    const int L = in.depth();
    double f = phi_out(in.channel, covariance_K_deep(in.act, in.pv, p).K, 1.0);
    double e = 0;
    for (std::size_t i = 0; i < p.QL.size(); ++i)
        e += in.pv.probs[i] * (psi_prior(in.prior, p.QL_hat[i]) - 0.5 * p.QL[i] * p.QL_hat[i]);
    f += gamma_at(in, L - 1) * gamma_at(in, L) / in.alpha * e;
    for (int l = 1; l < L; ++l)
        f += gamma_at(in, l - 1) * gamma_at(in, l) / in.alpha *
             (psi_prior(in.prior, p.Q_hat[l - 1]) - 0.5 * p.Q[l - 1] * p.Q_hat[l - 1]);
    return f;
}

double saddle_residual_deep(const OrderParamsDeep& p, const DeepInputs& in) {
    check_deep(in);
    auto g = shared_gtable(in.act);
    OrderParamsDeep n = deep_map(in, *g, p);
    double r = 0;
    for (std::size_t k = 0; k < p.Q.size(); ++k)
        r = std::max({r, std::abs(n.Q[k] - p.Q[k]), std::abs(n.Q_hat[k] - p.Q_hat[k]) / std::max(1.0, p.Q_hat[k])});
    for (std::size_t k = 0; k < p.QL.size(); ++k)
        r = std::max({r, std::abs(n.QL[k] - p.QL[k]), std::abs(n.QL_hat[k] - p.QL_hat[k]) / std::max(1.0, p.QL_hat[k])});
    return r;
}

DeepSolution iterate_deep(const DeepInputs& in, Branch seed, const SolverConfig& cfg) {
    check_deep(in);
    auto g = shared_gtable(in.act);
    const std::size_t nl = in.depth() - 1, nb = in.pv.size();
    double c0 = seed == Branch::Universal ? 0.0 : cfg.deep_seed_overlap;
    std::vector<double> x(nl + nb, c0);
    auto unpack = [&](const std::vector<double>& v) {
        OrderParamsDeep p;
        p.Q.assign(v.begin(), v.begin() + nl);
        p.QL.assign(v.begin() + nl, v.end());
        return p;
    };
    FixedPointResult fp = damped_fixed_point(
        x,
        [&](const std::vector<double>& v) {
            OrderParamsDeep n = deep_map(in, *g, unpack(v));
            std::vector<double> f = n.Q;
            f.insert(f.end(), n.QL.begin(), n.QL.end());
            return f;
        },
        cfg.damping, cfg.tol, cfg.max_iter);
    DeepSolution s;
    OrderParamsDeep at = unpack(fp.x);
    s.params = deep_map(in, *g, at);
    s.params.Q = at.Q;
    s.params.QL = at.QL;
    s.K = covariance_K_deep(in.act, in.pv, at).K;
    s.eps = std::max(0.0, 1.0 - s.K);
    s.seed = seed;
    s.converged = fp.converged;
    s.iterations = fp.iterations;
    s.residual = fp.residual;
    s.free_entropy = free_entropy_deep(s.params, in);
    return s;
}

DeepSolution select_deep(const std::vector<DeepSolution>& sols) {
    const DeepSolution* best = nullptr;
    for (const auto& s : sols)
        if (s.converged && (!best || s.free_entropy > best->free_entropy + 1e-12)) best = &s;
    if (!best) throw ConvergenceError("select_deep: no converged solution", INFINITY);
    return *best;
}

}  // namespace rsmlp
