#include "rsmlp/rs_shallow.hpp"

#include "rsmlp/errors.hpp"
#include "rsmlp/fixed_point.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <sstream>

namespace rsmlp {

std::string branch_name(Branch b) {
    switch (b) {
        case Branch::Universal: return "universal";
        case Branch::Partial: return "partial";
        default: return "specialisation";
    }
}

std::shared_ptr<const GTable> shared_gtable(const ActivationSpec& act) {
    static std::mutex mu;
    static std::map<std::string, std::shared_ptr<const GTable>> memo;
    std::ostringstream key;
    key.precision(17);
    key << act.name;
    for (double c : act.coefficients) key << ";" << c;
    {
        std::lock_guard<std::mutex> lock(mu);
        auto it = memo.find(key.str());
        if (it != memo.end()) return it->second;
    }
    auto t = std::make_shared<const GTable>(act);
    std::lock_guard<std::mutex> lock(mu);
    return memo.emplace(key.str(), t).first->second;
}

std::shared_ptr<const DenoisingPotential> shallow_potential(const ShallowInputs& in, const SolverConfig& cfg) {
    return DenoisingPotential::symmetric(in.gamma, in.pv, cfg.potentials);
}

double phi_out_slope(const OutputChannel& ch, double K, double K_d) {
    if (ch.kind == OutputChannel::Kind::Gaussian) {
        double v = ch.delta + K_d - K;
        if (!(v > 0)) throw std::domain_error("phi_out_slope: Delta + K_d - K <= 0");
        return 1.0 / v;
    }
    double h = 1e-5 * std::max(1.0, K_d);
    double hi = std::min(K + h, K_d), lo = K - h;
    return 2.0 * (phi_out(ch, hi, K_d) - phi_out(ch, lo, K_d)) / (hi - lo);
}

namespace {

void check_inputs(const ShallowInputs& in) {
    if (!(in.alpha > 0)) throw std::domain_error("alpha must be positive");
    if (!(in.gamma > 0)) throw std::domain_error("gamma must be positive");
    if (std::abs(in.act.mu(0)) > 1e-10) throw std::domain_error("activation must be centred");
    in.pv.validate();
}

void finite_or_throw(double x, const char* eq) {
    if (!std::isfinite(x)) throw NumericError(std::string("non-finite value in the ") + eq + " update");
}

struct Ctx {
    const ShallowInputs& in;
    std::shared_ptr<const GTable> gt;
    std::shared_ptr<const DenoisingPotential> pot;
    double vb, Rd, mu2;
    bool inert;

    Ctx(const ShallowInputs& i, const SolverConfig& cfg, bool need_potential = true)
        : in(i), gt(shared_gtable(i.act)), vb(i.pv.mean()), Rd(1 + i.gamma * vb * vb), mu2(i.act.mu(2)),
          inert(std::abs(mu2) < 1e-12) {
        if (need_potential) pot = shallow_potential(i, cfg);
    }

    double weighted_q2(const std::vector<double>& Q) const {
        double m = 0;
        for (std::size_t i = 0; i < Q.size(); ++i) m += in.pv.probs[i] * in.pv.values[i] * in.pv.values[i] * Q[i] * Q[i];
        return m;
    }
    double tau_of(double m) const { return m > 0 ? pot->inverse(std::max(0.0, 1.0 - m)) : 0.0; }
    Covariance cov(double R2, const std::vector<double>& Q) const {
        return covariance_K_l1(in.act, *gt, in.pv, in.gamma, R2, Q);
    }
};

// One undamped application of the full saddle map at (Q, R2).
struct MapOut {
    OrderParamsL1 next;  // Q, R2 updated; hats and tau evaluated at the input point
};

MapOut rs_map(const Ctx& c, const std::vector<double>& Q, double R2) {
    const auto& in = c.in;
    MapOut o;
    auto& n = o.next;
    double m = c.weighted_q2(Q);
    n.tau = c.tau_of(m);
    finite_or_throw(n.tau, "tau");
    Covariance kc = c.cov(c.inert ? 0.0 : R2, Q);
    double A = phi_out_slope(in.channel, kc.K, kc.K_d);
    n.R2_hat = c.inert ? 0.0 : in.alpha * c.mu2 * c.mu2 * A;
    finite_or_throw(n.R2_hat, "R2_hat");
    // (R2 - gamma vbar^2 - m) / (-mmse'(tau)), with R2 at its own fixed point given tau and R2_hat
    double ratio = 0.0;
    if (!c.inert && m > 0) {
        double dm = c.pot->dmmse(n.tau);
        if (n.tau >= 1e300 || dm == 0.0)
            ratio = n.R2_hat;  // mmse ~ C / x tail
        else
            ratio = (c.pot->mmse(n.tau) - c.pot->mmse(n.R2_hat + n.tau)) / -dm;
    }
    std::size_t nb = Q.size();
    n.Q.resize(nb);
    n.Q_hat.resize(nb);
    for (std::size_t i = 0; i < nb; ++i) {
        double v2 = in.pv.values[i] * in.pv.values[i];
        // g'(0) = 0 exactly for centred activations; keeps Q = 0 an exact fixed point
        double qh = Q[i] == 0.0 ? 0.0 : in.alpha / in.gamma * A * v2 * c.gt->dg(Q[i]);
        qh += ratio * v2 * Q[i] / in.gamma;
        finite_or_throw(qh, "Q_hat");
        n.Q_hat[i] = std::max(0.0, qh);
        n.Q[i] = overlap_update(in.prior, n.Q_hat[i]);
        finite_or_throw(n.Q[i], "Q");
    }
    n.R2 = c.inert ? 0.0 : c.Rd - c.pot->mmse(n.R2_hat + n.tau);
    finite_or_throw(n.R2, "R2");
    return o;
}

// Simplified ansatz map; Uni keeps Q = 0.
MapOut simplified_map(const Ctx& c, Ansatz which, const std::vector<double>& Q, double R2) {
    const auto& in = c.in;
    MapOut o;
    auto& n = o.next;
    std::size_t nb = Q.size();
    std::vector<double> Qe = which == Ansatz::Uni ? std::vector<double>(nb, 0.0) : Q;
    double mp = 1.0 - c.weighted_q2(Qe);
    Covariance kc = c.cov(R2, Qe);
    double A = phi_out_slope(in.channel, kc.K, kc.K_d);
    n.R2_hat = in.alpha * c.mu2 * c.mu2 * A;
    finite_or_throw(n.R2_hat, "R2_hat");
    n.Q.assign(nb, 0.0);
    n.Q_hat.assign(nb, 0.0);
    if (which == Ansatz::Uni) {
        n.R2 = c.Rd - c.pot->mmse(n.R2_hat);
    } else {
        double den = 1.0 + n.R2_hat * mp;
        n.R2 = c.Rd - mp / den;
        for (std::size_t i = 0; i < nb; ++i) {
            double v2 = in.pv.values[i] * in.pv.values[i];
            double qh = Qe[i] == 0.0 ? 0.0 : in.alpha / in.gamma * A * v2 * c.gt->dg(Qe[i]) + n.R2_hat * v2 * Qe[i] / (in.gamma * den);
            finite_or_throw(qh, "Q_hat");
            n.Q_hat[i] = std::max(0.0, qh);
            n.Q[i] = overlap_update(in.prior, n.Q_hat[i]);
        }
    }
    finite_or_throw(n.R2, "R2");
    return o;
}

void classify(RSolution& s, const ReadoutPrior& pv) {
    const double eps = 1e-6;
    bool any = false, all = true;
    double thr = INFINITY;
    for (std::size_t i = 0; i < pv.size(); ++i) {
        if (pv.values[i] == 0.0) continue;
        if (s.params.Q[i] > eps) {
            any = true;
            thr = std::min(thr, std::abs(pv.values[i]));
        } else {
            all = false;
        }
    }
    s.branch = !any ? Branch::Universal : all ? Branch::Specialisation : Branch::Partial;
    s.threshold = s.branch == Branch::Partial ? thr : 0.0;
}

std::vector<double> seed_overlaps(const ReadoutPrior& pv, const Seed& seed, double c) {
    std::vector<double> Q(pv.size(), 0.0);
    for (std::size_t i = 0; i < pv.size(); ++i) {
        if (seed.branch == Branch::Specialisation) Q[i] = c;
        else if (seed.branch == Branch::Partial && std::abs(pv.values[i]) >= seed.threshold) Q[i] = c;
    }
    return Q;
}

template <class Map>
RSolution run_fixed_point(const Ctx& c, const Seed& seed, const SolverConfig& cfg, Map map,
                          const OrderParamsL1* start = nullptr) {
    const auto& in = c.in;
    const std::size_t nb = in.pv.size();
    std::vector<double> x;
    if (start) {
        if (start->Q.size() != nb) throw std::invalid_argument("warm start does not match the readout law");
        x = start->Q;
        x.push_back(c.inert ? 0.0 : start->R2);
    } else {
        x = seed_overlaps(in.pv, seed, cfg.seed_overlap);
        x.push_back(c.inert ? 0.0 : in.gamma * c.vb * c.vb);
    }
    auto split = [nb](const std::vector<double>& v) { return std::vector<double>(v.begin(), v.begin() + nb); };
    FixedPointResult fp = damped_fixed_point(
        x,
        [&](const std::vector<double>& v) {
            MapOut o = map(split(v), v[nb]);
            std::vector<double> f = o.next.Q;
            f.push_back(o.next.R2);
            return f;
        },
        cfg.damping, cfg.tol, cfg.max_iter);
    RSolution s;
    s.seed = seed;
    // report the point the conjugates were evaluated at
    std::vector<double> Q = split(fp.x);
    s.params = map(Q, fp.x[nb]).next;
    s.params.Q = Q;
    s.params.R2 = fp.x[nb];
    s.iterations = fp.iterations;
    s.residual = fp.residual;
    s.converged = fp.converged;
    classify(s, in.pv);
    return s;
}

}  // namespace

namespace {

RSolution iterate_l1_impl(const ShallowInputs& in, const Seed& seed, const SolverConfig& cfg, const OrderParamsL1* start) {
    check_inputs(in);
    Ctx c(in, cfg);
    RSolution s = run_fixed_point(
        c, seed, cfg, [&](const std::vector<double>& Q, double R2) { return rs_map(c, Q, R2); }, start);
    Covariance kc = c.cov(s.params.R2, s.params.Q);
    s.K = kc.K;
    s.K_d = kc.K_d;
    s.eps = std::max(0.0, kc.K_d - kc.K);
    s.free_entropy = free_entropy_l1(s.params, in, cfg);
    s.model = "rs";
    return s;
}

}  // namespace

RSolution iterate_l1(const ShallowInputs& in, const Seed& seed, const SolverConfig& cfg) {
    return iterate_l1_impl(in, seed, cfg, nullptr);
}

RSolution iterate_l1_from(const ShallowInputs& in, const OrderParamsL1& start, const Seed& label, const SolverConfig& cfg) {
    return iterate_l1_impl(in, label, cfg, &start);
}

double free_entropy_l1(const OrderParamsL1& p, const ShallowInputs& in, const SolverConfig& cfg) {
    check_inputs(in);
    Ctx c(in, cfg);
    if (p.Q.size() != in.pv.size() || p.Q_hat.size() != in.pv.size())
        throw std::invalid_argument("free_entropy_l1: order parameters do not match the readout law");
    Covariance kc = c.cov(c.inert ? 0.0 : p.R2, p.Q);
    double f = phi_out(in.channel, kc.K, kc.K_d);
    f += (c.Rd - p.R2) * p.R2_hat / (4 * in.alpha);
    double e = 0;
    for (std::size_t i = 0; i < p.Q.size(); ++i)
        e += in.pv.probs[i] * (psi_prior(in.prior, p.Q_hat[i]) - 0.5 * p.Q[i] * p.Q_hat[i]);
    f += in.gamma / in.alpha * e;
    double tau = c.tau_of(c.weighted_q2(p.Q));
    f += (c.pot->iota(tau) - c.pot->iota(p.R2_hat + tau)) / in.alpha;
    return f;
}

OrderParamsL1 saddle_map_l1(const std::vector<double>& Q, double R2, const ShallowInputs& in,
                            const SolverConfig& cfg) {
    check_inputs(in);
    Ctx c(in, cfg);
    if (Q.size() != in.pv.size()) throw std::invalid_argument("saddle_map_l1: Q does not match the readout law");
    return rs_map(c, Q, R2).next;
}

double saddle_residual_l1(const OrderParamsL1& p, const ShallowInputs& in, const SolverConfig& cfg) {
    check_inputs(in);
    Ctx c(in, cfg);
    MapOut o = rs_map(c, p.Q, p.R2);
    double r = std::max({std::abs(o.next.R2 - p.R2), std::abs(o.next.R2_hat - p.R2_hat) / std::max(1.0, p.R2_hat)});
    for (std::size_t i = 0; i < p.Q.size(); ++i) {
        r = std::max(r, std::abs(o.next.Q[i] - p.Q[i]));
        r = std::max(r, std::abs(o.next.Q_hat[i] - p.Q_hat[i]) / std::max(1.0, p.Q_hat[i]));
    }
    return r;
}

double simplified_free_entropy(const OrderParamsL1& p, const ShallowInputs& in, Ansatz which,
                               const SolverConfig& cfg) {
    check_inputs(in);
    Ctx c(in, cfg, which == Ansatz::Uni);
    std::vector<double> Q = which == Ansatz::Uni ? std::vector<double>(in.pv.size(), 0.0) : p.Q;
    Covariance kc = c.cov(p.R2, Q);
    double f = phi_out(in.channel, kc.K, kc.K_d) + (c.Rd - p.R2) * p.R2_hat / (4 * in.alpha);
    if (which == Ansatz::Uni) return f - c.pot->iota(p.R2_hat) / in.alpha;
    double e = 0;
    for (std::size_t i = 0; i < Q.size(); ++i)
        e += in.pv.probs[i] * (psi_prior(in.prior, p.Q_hat[i]) - 0.5 * Q[i] * p.Q_hat[i]);
    double arg = 1.0 + p.R2_hat * (1.0 - c.weighted_q2(Q));
    if (!(arg > 0)) throw std::domain_error("simplified_free_entropy: log of a non-positive argument");
    return f + in.gamma / in.alpha * e - std::log(arg) / (4 * in.alpha);
}

RSolution iterate_simplified(const ShallowInputs& in, Ansatz which, const Seed& seed, const SolverConfig& cfg) {
    check_inputs(in);
    Ctx c(in, cfg, which == Ansatz::Uni);
    Seed sd = which == Ansatz::Uni ? Seed{} : seed;
    // R2 is a live variable here even when mu2 = 0
    Ctx live = c;
    live.inert = false;
    RSolution s = run_fixed_point(live, sd, cfg,
                                  [&](const std::vector<double>& Q, double R2) { return simplified_map(live, which, Q, R2); });
    Covariance kc = c.cov(s.params.R2, s.params.Q);
    s.K = kc.K;
    s.K_d = kc.K_d;
    s.eps = std::max(0.0, kc.K_d - kc.K);
    s.free_entropy = simplified_free_entropy(s.params, in, which, cfg);
    s.model = which == Ansatz::Uni ? "uni" : "sp";
    return s;
}

std::vector<Seed> default_seeds(const ReadoutPrior& pv) {
    std::vector<Seed> s{{Branch::Universal, 0.0}, {Branch::Specialisation, 0.0}};
    std::vector<double> mags;
    for (double v : pv.values)
        if (v != 0.0) mags.push_back(std::abs(v));
    std::sort(mags.begin(), mags.end());
    mags.erase(std::unique(mags.begin(), mags.end(), [](double a, double b) { return std::abs(a - b) < 1e-12; }),
               mags.end());
    for (std::size_t i = 1; i < mags.size(); ++i) s.push_back({Branch::Partial, mags[i]});
    return s;
}

std::vector<RSolution> solve_all_l1(const ShallowInputs& in, const SolverConfig& cfg) {
    std::vector<RSolution> out;
    for (const Seed& s : default_seeds(in.pv)) out.push_back(iterate_l1(in, s, cfg));
    return out;
}

RSolution select_branch(const std::vector<RSolution>& solutions) {
    const RSolution* best = nullptr;
    auto mass = [](const RSolution& s) {
        double t = 0;
        for (double q : s.params.Q) t += q;
        return t;
    };
    for (const auto& s : solutions) {
        if (!s.converged) continue;
        if (!best || s.free_entropy > best->free_entropy + 1e-12 ||
            (std::abs(s.free_entropy - best->free_entropy) <= 1e-12 && mass(s) > mass(*best)))
            best = &s;
    }
    if (!best) throw ConvergenceError("select_branch: no converged solution", INFINITY);
    return *best;
}

double gen_error(const RSolution& sol, const OutputChannel& ch, bool include_noise) {
    if (sol.K > sol.K_d + 1e-10) throw std::domain_error("gen_error: K > K_d");
    double e = std::max(0.0, sol.K_d - sol.K);
    if (include_noise) {
        if (ch.kind != OutputChannel::Kind::Gaussian) throw std::domain_error("gen_error: noise term needs a Gaussian channel");
        e += ch.delta;
    }
    return e;
}

double mutual_information(double f_n, double delta) {
    if (!(delta > 0)) throw std::domain_error("mutual_information: delta must be positive");
    return -f_n - 0.5 * std::log(2 * M_PI * M_E * delta);
}

namespace {

// true when a specialised solution beats the universal one at this alpha
bool specialised_wins(const ShallowInputs& in, TransitionRule rule, const SolverConfig& cfg) {
    if (rule == TransitionRule::Full) {
        auto sols = solve_all_l1(in, cfg);
        return select_branch(sols).branch != Branch::Universal;
    }
    RSolution uni = iterate_simplified(in, Ansatz::Uni, Seed{}, cfg);
    double best = -INFINITY;
    for (const Seed& s : default_seeds(in.pv)) {
        if (s.branch == Branch::Universal) continue;
        RSolution sp = iterate_simplified(in, Ansatz::Sp, s, cfg);
        if (sp.converged && sp.branch != Branch::Universal) best = std::max(best, sp.free_entropy);
    }
    return best > uni.free_entropy;
}

}  // namespace

double alpha_sp(ShallowInputs in, double lo, double hi, TransitionRule rule, const SolverConfig& cfg,
                double resolution) {
    if (!(lo > 0) || !(hi > lo)) throw std::domain_error("alpha_sp: need 0 < lo < hi");
    auto wins = [&](double a) {
        in.alpha = a;
        return specialised_wins(in, rule, cfg);
    };
    if (wins(lo)) return lo;
    if (!wins(hi)) throw ConvergenceError("alpha_sp: no transition below the upper bracket", hi);
    while (hi - lo > resolution) {
        double mid = 0.5 * (lo + hi);
        (wins(mid) ? hi : lo) = mid;
    }
    return 0.5 * (lo + hi);
}

}  // namespace rsmlp
