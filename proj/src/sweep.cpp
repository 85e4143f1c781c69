#include "rsmlp/sweep.hpp"

#include "rsmlp/errors.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

namespace rsmlp {

using nlohmann::json;

namespace {

// ---- config reading ----

class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where("") + ": expected a table");
    }

    template <class T>
    void get(const char* key, T& dst) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            dst = j_.at(key).get<T>();
        } catch (const json::exception&) {
            throw ConfigError(where(key) + ": wrong type (" + std::string(j_.at(key).type_name()) + ")");
        }
    }

    std::optional<Reader> table(const char* key) {
        seen_.insert(key);
        if (!j_.contains(key)) return std::nullopt;
        return Reader(j_.at(key), where(key));
    }

    const json* raw(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string where(const std::string& key) const {
        if (path_.empty()) return key.empty() ? "<root>" : key;
        return key.empty() ? path_ : path_ + "." + key;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(where(it.key()) + ": unknown field");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

std::vector<double> alphas_from_json(const json& a, const std::string& path) {
    if (a.is_number()) return {a.get<double>()};
    if (a.is_string()) {
        try {
            return parse_alpha_range(a.get<std::string>());
        } catch (const ConfigError& e) {
            throw ConfigError(path + ": " + e.what());
        }
    }
    if (a.is_array()) {
        std::vector<double> out;
        for (const auto& x : a) {
            if (!x.is_number()) throw ConfigError(path + ": entries must be numbers");
            out.push_back(x.get<double>());
        }
        return out;
    }
    if (a.is_object()) {
        for (const char* k : {"lo", "hi", "step"})
            if (!a.contains(k) || !a.at(k).is_number()) throw ConfigError(path + "." + k + ": required number");
        std::ostringstream os;
        os.precision(17);
        os << a.at("lo").get<double>() << ':' << a.at("hi").get<double>() << ':' << a.at("step").get<double>();
        return parse_alpha_range(os.str());
    }
    throw ConfigError(path + ": expected a number, list, \"lo:hi:step\" or {lo, hi, step}");
}

std::string fmt(double x) {
    if (std::isnan(x)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", x);
    return buf;
}

json num(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

ActivationSpec solver_activation(const std::string& name, bool center) {
    ActivationSpec a = make_activation(name);
    if (center && std::abs(a.mu(0)) > 0) a = center_activation(a);
    return a;
}

SolverConfig solver_config(const SweepConfig& cfg) {
    SolverConfig s = cfg.solver;
    if (!cfg.cache_dir.empty()) s.potentials.cache_dir = cfg.cache_dir;
    return s;
}

// Runs f(i) for i in [0, n) on up to `threads` workers; f must not throw.
template <class F>
void parallel_for(std::size_t n, int threads, F&& f) {
    std::size_t workers = std::min<std::size_t>(std::max(1, threads), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i; (i = next++) < n;) f(i);
        });
    for (auto& t : pool) t.join();
}

double overlap_mass(const RSolution& s) {
    double t = 0;
    for (double q : s.params.Q) t += q;
    return t;
}

std::vector<std::pair<std::string, double>> per_value(const std::string& label, const std::vector<double>& values,
                                                      const std::vector<double>& q) {
    std::vector<std::pair<std::string, double>> out;
    for (std::size_t i = 0; i < q.size(); ++i) out.emplace_back(label + "=" + fmt(values[i]), q[i]);
    return out;
}

bool wanted(const SweepConfig& cfg, const std::string& family) {
    return cfg.branches.empty() || std::find(cfg.branches.begin(), cfg.branches.end(), family) != cfg.branches.end();
}

// Linear interpolation of the first upward crossing of level.
double crossing(const std::vector<double>& a, const std::vector<double>& v, double level) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!(v[i] >= level)) continue;
        if (i == 0 || !std::isfinite(v[i - 1])) return a[i];
        return a[i - 1] + (level - v[i - 1]) * (a[i] - a[i - 1]) / (v[i] - v[i - 1]);
    }
    return NAN;
}

// ---- l1 ----

PhaseRecord record_l1(double alpha, const std::string& branch, const RSolution& s, const ShallowInputs& in) {
    PhaseRecord r;
    r.alpha = alpha;
    r.branch = branch;
    r.free_entropy = s.free_entropy;
    r.eps = s.eps;
    r.K = s.K;
    r.K_d = s.K_d;
    r.converged = s.converged;
    r.iterations = s.iterations;
    r.residual = s.residual;
    r.overlaps = per_value("q_v", in.pv.values, s.params.Q);
    r.extra = {{"R2", s.params.R2}, {"tau", s.params.tau}, {"threshold", s.threshold}};
    r.reached = branch_name(s.branch);
    return r;
}

SweepResult sweep_l1(const SweepConfig& cfg) {
    SweepResult res;
    const SolverConfig sc = solver_config(cfg);
    const ShallowInputs base = shallow_inputs(cfg, cfg.alphas.front());
    std::vector<Seed> seeds;
    for (const Seed& s : default_seeds(base.pv))
        if (wanted(cfg, branch_name(s.branch))) seeds.push_back(s);
    const std::size_t na = cfg.alphas.size(), ns = seeds.size();

    std::vector<std::optional<RSolution>> sol(na * ns);
    std::vector<std::string> err(na * ns);
    auto solve = [&](std::size_t ai, std::size_t si, const RSolution* prev) {
        ShallowInputs in = shallow_inputs(cfg, cfg.alphas[ai]);
        try {
            bool warm = prev && prev->converged && (seeds[si].branch == Branch::Universal || overlap_mass(*prev) > 1e-8);
            sol[ai * ns + si] = warm ? iterate_l1_from(in, prev->params, seeds[si], sc) : iterate_l1(in, seeds[si], sc);
        } catch (const std::exception& e) {
            err[ai * ns + si] = e.what();
        }
    };
    if (cfg.warm_start) {
        parallel_for(ns, cfg.threads, [&](std::size_t si) {
            for (std::size_t ai = 0; ai < na; ++ai) {
                const auto& p = ai ? sol[(ai - 1) * ns + si] : std::nullopt;
                solve(ai, si, p ? &*p : nullptr);
            }
        });
    } else {
        parallel_for(na * ns, cfg.threads, [&](std::size_t t) { solve(t / ns, t % ns, nullptr); });
    }

    std::vector<std::string> families;
    for (const char* f : {"universal", "partial", "specialisation"})
        if (std::any_of(seeds.begin(), seeds.end(), [&](const Seed& s) { return branch_name(s.branch) == f; }))
            families.push_back(f);

    for (std::size_t ai = 0; ai < na; ++ai) {
        const double a = cfg.alphas[ai];
        ShallowInputs in = shallow_inputs(cfg, a);
        std::vector<RSolution> all;
        for (std::size_t si = 0; si < ns; ++si) {
            if (!err[ai * ns + si].empty())
                res.failures.push_back({a, branch_name(seeds[si].branch), err[ai * ns + si]});
            else
                all.push_back(*sol[ai * ns + si]);
        }
        for (const auto& fam : families) {
            const RSolution* best = nullptr;
            for (const auto& s : all) {
                if (branch_name(s.seed.branch) != fam) continue;
                bool better = !best || (s.converged && !best->converged) ||
                              (s.converged == best->converged &&
                               (s.converged ? s.free_entropy > best->free_entropy + 1e-12 : s.residual < best->residual));
                if (better) best = &s;
            }
            if (best) res.records.push_back(record_l1(a, fam, *best, in));
        }
        try {
            res.records.push_back(record_l1(a, "equilibrium", select_branch(all), in));
        } catch (const ConvergenceError& e) {
            res.failures.push_back({a, "equilibrium", e.what()});
        }
    }

    // first grid point where each non-universal branch is the equilibrium
    for (std::size_t i = 0; i < res.records.size(); ++i) {
        const auto& r = res.records[i];
        if (r.branch != "equilibrium" || r.reached == "universal" || res.alpha_sp.count(r.reached)) continue;
        double at = r.alpha;
        auto pos = std::find(cfg.alphas.begin(), cfg.alphas.end(), r.alpha) - cfg.alphas.begin();
        if (cfg.refine_alpha_sp && pos > 0 && r.reached == "specialisation") {
            try {
                at = alpha_sp(shallow_inputs(cfg, r.alpha), cfg.alphas[pos - 1], r.alpha, TransitionRule::Full, sc);
            } catch (const std::exception& e) {
                res.failures.push_back({r.alpha, "alpha_sp", e.what()});
            }
        }
        res.alpha_sp[r.reached] = at;
    }
    return res;
}

// ---- l2 ----

double l2_mass(const L2Solution& s) { return s.mean_Q1() + s.mean_Q2() + s.mean_Q21(); }

PhaseRecord record_l2(double alpha, const std::string& branch, const L2Solution& s, const L2Inputs& in) {
    PhaseRecord r;
    r.alpha = alpha;
    r.branch = branch;
    r.free_entropy = s.free_entropy;
    r.eps = s.eps;
    r.K = s.K;
    r.K_d = s.K_d;
    r.converged = s.converged;
    r.iterations = s.iterations;
    r.residual = s.residual;
    r.overlaps = per_value("q1_v2", in.pv2.values, s.params.Q1);
    for (auto& p : per_value("q21_v", in.pv.values, s.params.Q21)) r.overlaps.push_back(p);
    r.overlaps.emplace_back("q2_mean", s.mean_Q2());
    r.extra = {{"Q1_mean", s.mean_Q1()}, {"Q21_mean", s.mean_Q21()}};
    r.reached = l2_seed_name(s.seed.kind);
    return r;
}

SweepResult sweep_l2(const SweepConfig& cfg) {
    SweepResult res;
    const SolverConfig sc = solver_config(cfg);
    std::vector<L2SeedSpec> seeds;
    for (const auto& s : default_seeds_l2(l2_inputs(cfg, cfg.alphas.front())))
        if (wanted(cfg, l2_seed_name(s.kind))) seeds.push_back(s);
    const std::size_t na = cfg.alphas.size(), ns = seeds.size();
    std::vector<std::optional<L2Solution>> sol(na * ns);
    std::vector<std::string> err(na * ns);
    auto solve = [&](std::size_t ai, std::size_t si, const L2Solution* prev) {
        L2Inputs in = l2_inputs(cfg, cfg.alphas[ai]);
        try {
            bool warm = prev && prev->converged && (seeds[si].kind == L2Seed::Universal || l2_mass(*prev) > 1e-8);
            L2Solution s = warm ? iterate_l2_from(in, prev->params, sc) : iterate_l2(in, seeds[si], sc);
            s.seed = seeds[si];
            sol[ai * ns + si] = std::move(s);
        } catch (const std::exception& e) {
            err[ai * ns + si] = e.what();
        }
    };
    if (cfg.warm_start) {
        parallel_for(ns, cfg.threads, [&](std::size_t si) {
            for (std::size_t ai = 0; ai < na; ++ai) {
                const auto& p = ai ? sol[(ai - 1) * ns + si] : std::nullopt;
                solve(ai, si, p ? &*p : nullptr);
            }
        });
    } else {
        parallel_for(na * ns, cfg.threads, [&](std::size_t t) { solve(t / ns, t % ns, nullptr); });
    }

    std::vector<double> q1(na, NAN), q2(na, NAN), q21(na, NAN);
    for (std::size_t ai = 0; ai < na; ++ai) {
        const double a = cfg.alphas[ai];
        L2Inputs in = l2_inputs(cfg, a);
        std::vector<L2Solution> all;
        for (std::size_t si = 0; si < ns; ++si) {
            const std::string name = l2_seed_name(seeds[si].kind);
            if (!err[ai * ns + si].empty()) {
                res.failures.push_back({a, name, err[ai * ns + si]});
                continue;
            }
            all.push_back(*sol[ai * ns + si]);
            res.records.push_back(record_l2(a, name, all.back(), in));
        }
        try {
            L2Solution eq = select_l2(all);
            res.records.push_back(record_l2(a, "equilibrium", eq, in));
            q1[ai] = eq.mean_Q1();
            q2[ai] = eq.mean_Q2();
            q21[ai] = eq.mean_Q21();
        } catch (const ConvergenceError& e) {
            res.failures.push_back({a, "equilibrium", e.what()});
        }
    }
    // transitions of the equilibrium overlaps through one half
    const std::pair<const char*, const std::vector<double>*> marks[] = {{"Q1", &q1}, {"Q2", &q2}, {"Q21", &q21}};
    for (const auto& [name, v] : marks) {
        double t = crossing(cfg.alphas, *v, 0.5);
        if (std::isfinite(t)) res.alpha_sp[name] = t;
    }
    return res;
}

// ---- deep ----

PhaseRecord record_deep(double alpha, const std::string& branch, const DeepSolution& s, const DeepInputs& in) {
    PhaseRecord r;
    r.alpha = alpha;
    r.branch = branch;
    r.free_entropy = s.free_entropy;
    r.eps = s.eps;
    r.K = s.K;
    r.K_d = s.K_d;
    r.converged = s.converged;
    r.iterations = s.iterations;
    r.residual = s.residual;
    for (std::size_t l = 0; l < s.params.Q.size(); ++l) r.overlaps.emplace_back("Q_l=" + std::to_string(l + 1), s.params.Q[l]);
    for (auto& p : per_value("q_v", in.pv.values, s.params.QL)) r.overlaps.push_back(p);
    double m = 0;
    for (double q : s.params.Q) m = std::max(m, q);
    for (double q : s.params.QL) m = std::max(m, q);
    r.reached = m > 1e-8 ? "specialisation" : "universal";
    return r;
}

SweepResult sweep_deep(const SweepConfig& cfg) {
    SweepResult res;
    const SolverConfig sc = solver_config(cfg);
    std::vector<Branch> seeds;
    for (Branch b : {Branch::Universal, Branch::Specialisation})
        if (wanted(cfg, branch_name(b))) seeds.push_back(b);
    const std::size_t na = cfg.alphas.size(), ns = seeds.size();
    std::vector<std::optional<DeepSolution>> sol(na * ns);
    std::vector<std::string> err(na * ns);
    parallel_for(na * ns, cfg.threads, [&](std::size_t t) {
        try {
            sol[t] = iterate_deep(deep_inputs(cfg, cfg.alphas[t / ns]), seeds[t % ns], sc);
        } catch (const std::exception& e) {
            err[t] = e.what();
        }
    });
    for (std::size_t ai = 0; ai < na; ++ai) {
        const double a = cfg.alphas[ai];
        DeepInputs in = deep_inputs(cfg, a);
        std::vector<DeepSolution> all;
        for (std::size_t si = 0; si < ns; ++si) {
            if (!err[ai * ns + si].empty()) {
                res.failures.push_back({a, branch_name(seeds[si]), err[ai * ns + si]});
                continue;
            }
            all.push_back(*sol[ai * ns + si]);
            res.records.push_back(record_deep(a, branch_name(seeds[si]), all.back(), in));
        }
        try {
            PhaseRecord r = record_deep(a, "equilibrium", select_deep(all), in);
            if (r.reached == "specialisation" && !res.alpha_sp.count("specialisation")) res.alpha_sp["specialisation"] = a;
            res.records.push_back(std::move(r));
        } catch (const ConvergenceError& e) {
            res.failures.push_back({a, "equilibrium", e.what()});
        }
    }
    return res;
}

// ---- spectrum ----

SweepResult sweep_spectrum(const SweepConfig& cfg) {
    SweepResult res;
    SpectralDensity rho;
    ReadoutPrior pv = make_readout_prior(cfg.readout_prior, cfg.readout_bins);
    const auto& opt = cfg.solver.potentials.spectral;
    if (cfg.spectrum == "generalized_mp")
        rho = generalized_mp_density(cfg.gamma, pv, opt);
    else if (cfg.spectrum == "observation")
        rho = symmetric_observation_density(cfg.gamma, pv, cfg.snr, opt);
    else if (cfg.spectrum == "rectangular")
        rho = rectangular_density(cfg.snr, cfg.eta, cfg.gamma, opt);
    else
        rho = marchenko_pastur_density(cfg.ratio, opt);
    for (std::size_t i = 0; i < rho.grid.size(); ++i) res.spectrum.emplace_back(rho.grid[i], rho.density[i]);
    res.atoms = rho.atoms;
    return res;
}

// ---- experiments ----

double test_error(const Eigen::VectorXd& pred, const Eigen::VectorXd& truth) {
    return (pred - truth).squaredNorm() / std::max<Eigen::Index>(1, truth.size());
}

std::uint64_t test_seed(std::uint64_t seed) { return seed ^ 0x9e3779b97f4a7c15ull; }

struct Theory {
    double alpha = 0, eps_uni = NAN, eps_sp = NAN, eps_eq = NAN, f_uni = NAN, f_sp = NAN, f_eq = NAN;
    std::string eq_branch;
    std::string error;
};

Theory theory_point(const SweepConfig& cfg, double alpha) {
    Theory t;
    t.alpha = alpha;
    try {
        ShallowInputs in = shallow_inputs(cfg, alpha);
        auto sols = solve_all_l1(in, solver_config(cfg));
        for (const auto& s : sols) {
            if (!s.converged) continue;
            if (s.branch == Branch::Universal) {
                if (!(s.free_entropy <= t.f_uni)) t.f_uni = s.free_entropy, t.eps_uni = s.eps;
            } else if (!(s.free_entropy <= t.f_sp)) {
                t.f_sp = s.free_entropy, t.eps_sp = s.eps;
            }
        }
        RSolution eq = select_branch(sols);
        t.eps_eq = eq.eps;
        t.f_eq = eq.free_entropy;
        t.eq_branch = branch_name(eq.branch);
    } catch (const std::exception& e) {
        t.error = e.what();
    }
    return t;
}

json theory_json(const Theory& t) {
    json j = {{"alpha", t.alpha},          {"eps_universal", num(t.eps_uni)}, {"eps_specialised", num(t.eps_sp)},
              {"eps_equilibrium", num(t.eps_eq)}, {"f_universal", num(t.f_uni)},     {"f_specialised", num(t.f_sp)},
              {"f_equilibrium", num(t.f_eq)},  {"equilibrium_branch", t.eq_branch}};
    if (!t.error.empty()) j["error"] = t.error;
    return j;
}

Architecture data_architecture(const SweepConfig& cfg) {
    Architecture a;
    a.d = cfg.d;
    a.widths = {std::max(1, (int)std::lround(cfg.gamma * cfg.d))};
    a.act = make_activation(cfg.activation);
    return a;
}

json gamp_run(const SweepConfig& cfg, double alpha, std::uint64_t seed) {
    Architecture arch = data_architecture(cfg);
    const int n = (int)std::lround(alpha * cfg.d * cfg.d);
    CovarianceSpec cov = parse_covariance(cfg.covariance);
    Dataset ds = generate_dataset(arch, make_weight_prior(cfg.weight_prior),
                                  make_readout_prior(cfg.readout_prior, cfg.readout_bins), n, cfg.delta, cov, seed);
    GampFit fit = gamp_rie_fit(ds, arch.act, cfg.delta, cfg.gamp);
    Eigen::MatrixXd X = sample_inputs(cfg.n_test, cfg.d, cov, test_seed(seed));
    double e = test_error(gamp_rie_predict_batch(fit, X), forward_batch(ds.teacher, X));
    return {{"alpha", alpha}, {"seed", seed}, {"method", "gamp"}, {"error", e},
            {"iterations", fit.iterations}, {"converged", fit.converged}};
}

json metropolis_run(const SweepConfig& cfg, double alpha, std::uint64_t seed) {
    Architecture arch = data_architecture(cfg);
    const int n = (int)std::lround(alpha * cfg.d * cfg.d);
    CovarianceSpec cov = parse_covariance(cfg.covariance);
    Dataset ds = generate_dataset(arch, make_weight_prior(cfg.weight_prior),
                                  make_readout_prior(cfg.readout_prior, cfg.readout_bins), n, cfg.delta, cov, seed);
    std::vector<MetropolisResult> chains;
    json per_chain = json::array();
    double hg = 0;
    for (int c = 0; c < cfg.chains; ++c) {
        MetropolisConfig mc = cfg.metropolis;
        mc.n_test = cfg.n_test;
        mc.seed = cfg.metropolis.seed + 7919ull * (std::uint64_t)c + seed;
        chains.push_back(metropolis_sample(ds, mc));
        const auto& h = chains.back().half_gibbs;
        double m = 0;
        std::size_t from = h.size() / 2;
        for (std::size_t i = from; i < h.size(); ++i) m += h[i];
        m /= std::max<std::size_t>(1, h.size() - from);
        hg += m / cfg.chains;
        per_chain.push_back({{"half_gibbs", m}, {"sweeps", chains.back().sweeps},
                             {"acceptance", chains.back().acceptance}, {"plateau_stop", chains.back().plateau_stop}});
    }
    json j = {{"alpha", alpha}, {"seed", seed}, {"method", "metropolis"}, {"error", hg}, {"chains", per_chain}};
    if (chains.size() >= 2) {
        Eigen::MatrixXd X = sample_inputs(cfg.n_test, cfg.d, cov, test_seed(seed));
        auto nd = nishimori_deviation(chains[0], chains[1], ds.teacher, X);
        double m = 0;
        int cnt = 0;
        for (std::size_t i = nd.size() - nd.size() / 4; i < nd.size(); ++i)
            if (std::isfinite(nd[i])) m += nd[i], ++cnt;
        j["nishimori"] = cnt ? json(m / cnt) : json(nullptr);
    }
    return j;
}

}  // namespace

// ---- public ----

std::vector<double> parse_alpha_range(const std::string& spec) {
    auto parse = [&](const std::string& s) {
        std::size_t used = 0;
        double v;
        try {
            v = std::stod(s, &used);
        } catch (const std::exception&) {
            throw ConfigError("alpha: cannot parse '" + spec + "'");
        }
        if (used != s.size()) throw ConfigError("alpha: cannot parse '" + spec + "'");
        return v;
    };
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() == 1) return {parse(parts[0])};
    if (parts.size() != 3) throw ConfigError("alpha: expected LO:HI:STEP, got '" + spec + "'");
    double lo = parse(parts[0]), hi = parse(parts[1]), step = parse(parts[2]);
    if (!(step > 0)) throw ConfigError("alpha: step must be positive");
    if (hi < lo) return {};
    std::vector<double> out;
    const long m = std::lround(std::floor((hi - lo) / step + 1e-9));
    for (long i = 0; i <= m; ++i) out.push_back(lo + i * step);
    return out;
}

SweepConfig config_from_json(const json& j, SweepConfig c) {
    Reader r(j, "");
    r.get("task", c.task);
    r.get("activation", c.activation);
    r.get("activation2", c.activation2);
    r.get("center", c.center);
    if (auto p = r.table("priors")) {
        p->get("weights", c.weight_prior);
        p->get("weights2", c.weight_prior2);
        p->get("readouts", c.readout_prior);
        p->get("readout_bins", c.readout_bins);
        p->get("v2_bins", c.v2_bins);
        p->finish();
    }
    r.get("gamma", c.gamma);
    r.get("gammas", c.gammas);
    if (const json* a = r.raw("alpha")) c.alphas = alphas_from_json(*a, "alpha");
    r.get("delta", c.delta);
    r.get("channel", c.channel);
    r.get("seeds", c.seeds);
    r.get("branches", c.branches);
    r.get("warm_start", c.warm_start);
    r.get("refine_alpha_sp", c.refine_alpha_sp);
    if (auto o = r.table("output")) {
        o->get("path", c.out);
        o->get("format", c.format);
        o->finish();
    }
    r.get("threads", c.threads);
    r.get("cache_dir", c.cache_dir);
    if (auto s = r.table("solver")) {
        s->get("damping", c.solver.damping);
        s->get("tol", c.solver.tol);
        s->get("max_iter", c.solver.max_iter);
        s->get("seed_overlap", c.solver.seed_overlap);
        s->get("deep_seed_overlap", c.solver.deep_seed_overlap);
        s->get("nodes", c.solver.potentials.nodes);
        s->get("x_min", c.solver.potentials.x_min);
        s->get("x_max", c.solver.potentials.x_max);
        s->finish();
    }
    if (auto s = r.table("spectrum")) {
        s->get("kind", c.spectrum);
        s->get("snr", c.snr);
        s->get("eta", c.eta);
        s->get("ratio", c.ratio);
        s->finish();
    }
    if (auto s = r.table("simulation")) {
        s->get("d", c.d);
        s->get("method", c.method);
        s->get("dataset", c.dataset);
        s->get("covariance", c.covariance);
        s->get("n_test", c.n_test);
        s->get("chains", c.chains);
        if (auto m = s->table("metropolis")) {
            m->get("max_sweeps", c.metropolis.max_sweeps);
            m->get("thin", c.metropolis.thin);
            m->get("plateau_window", c.metropolis.plateau_window);
            m->get("plateau_tol", c.metropolis.plateau_tol);
            m->get("init_teacher", c.metropolis.init_teacher);
            m->get("seed", c.metropolis.seed);
            m->finish();
        }
        if (auto g = s->table("gamp")) {
            g->get("max_iter", c.gamp.max_iter);
            g->get("tol", c.gamp.tol);
            g->get("damping_mean", c.gamp.damping_mean);
            g->get("damping_var", c.gamp.damping_var);
            g->get("refine_linear", c.gamp.refine_linear);
            g->finish();
        }
        s->finish();
    }
    r.finish();
    return c;
}

SweepConfig load_config(const std::string& path, SweepConfig base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    json j;
    try {
        j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
    return config_from_json(j, std::move(base));
}

CovarianceSpec parse_covariance(const std::string& spec) {
    if (spec.empty() || spec == "identity") return CovarianceSpec::identity();
    if (spec.rfind("wishart:", 0) == 0) {
        int d0 = 0;
        try {
            d0 = std::stoi(spec.substr(8));
        } catch (const std::exception&) {
            throw ConfigError("simulation.covariance: bad Wishart width in '" + spec + "'");
        }
        if (d0 <= 0) throw ConfigError("simulation.covariance: Wishart width must be positive");
        return CovarianceSpec::wishart(d0);
    }
    if (spec.rfind("file:", 0) == 0) return CovarianceSpec::file(spec.substr(5));
    throw ConfigError("simulation.covariance: expected identity, wishart:<d0> or file:<path>");
}

void validate_config(const SweepConfig& c) {
    static const std::set<std::string> tasks{"l1", "l2", "deep", "gamp", "simulate", "spectrum"};
    if (!tasks.count(c.task)) throw ConfigError("task: unknown task '" + c.task + "'");
    auto names = activation_names();
    for (auto [field, v] : {std::pair{"activation", c.activation}, std::pair{"activation2", c.activation2}})
        if (!v.empty() && std::find(names.begin(), names.end(), v) == names.end())
            throw ConfigError(std::string(field) + ": unknown activation '" + v + "'");
    for (auto [field, v] : {std::pair{"priors.weights", c.weight_prior}, std::pair{"priors.weights2", c.weight_prior2}}) {
        if (v.empty() && std::string(field) == "priors.weights2") continue;
        try {
            make_weight_prior(v);
        } catch (const std::exception&) {
            throw ConfigError(std::string(field) + ": unknown weight prior '" + v + "'");
        }
    }
    if (c.readout_bins < 1) throw ConfigError("priors.readout_bins: must be positive");
    try {
        make_readout_prior(c.readout_prior, c.readout_bins);
    } catch (const std::exception& e) {
        throw ConfigError("priors.readouts: " + std::string(e.what()));
    }
    if (c.v2_bins < 3 || c.v2_bins % 2 == 0) throw ConfigError("priors.v2_bins: must be odd and at least 3");
    if (!(c.gamma > 0)) throw ConfigError("gamma: must be positive");
    for (std::size_t i = 0; i < c.gammas.size(); ++i)
        if (!(c.gammas[i] > 0)) throw ConfigError("gammas[" + std::to_string(i) + "]: must be positive");
    if (!(c.delta > 0)) throw ConfigError("delta: must be positive");
    if (c.channel != "gaussian") throw ConfigError("channel: only 'gaussian' is available");
    if (c.format != "csv" && c.format != "json") throw ConfigError("output.format: expected csv or json");
    if (c.threads < 1) throw ConfigError("threads: must be at least 1");
    if (!(c.solver.damping >= 0 && c.solver.damping < 1)) throw ConfigError("solver.damping: must lie in [0, 1)");
    if (!(c.solver.tol > 0)) throw ConfigError("solver.tol: must be positive");
    if (c.solver.max_iter < 1) throw ConfigError("solver.max_iter: must be positive");
    if (!(c.solver.seed_overlap > 0 && c.solver.seed_overlap <= 1)) throw ConfigError("solver.seed_overlap: must lie in (0, 1]");
    if (!(c.solver.deep_seed_overlap > 0 && c.solver.deep_seed_overlap <= 1))
        throw ConfigError("solver.deep_seed_overlap: must lie in (0, 1]");
    if (c.solver.potentials.nodes < 16) throw ConfigError("solver.nodes: must be at least 16");
    if (!(c.solver.potentials.x_min > 0 && c.solver.potentials.x_max > c.solver.potentials.x_min))
        throw ConfigError("solver.x_min: need 0 < x_min < x_max");

    const bool needs_alpha = c.task != "spectrum" && !(c.task == "gamp" && !c.dataset.empty());
    if (needs_alpha && c.alphas.empty()) throw ConfigError("alpha: grid is empty");
    for (std::size_t i = 0; i < c.alphas.size(); ++i) {
        if (!(c.alphas[i] > 0) || !std::isfinite(c.alphas[i]))
            throw ConfigError("alpha[" + std::to_string(i) + "]: must be positive");
        if (i && !(c.alphas[i] > c.alphas[i - 1])) throw ConfigError("alpha[" + std::to_string(i) + "]: grid must be ascending");
    }

    std::set<std::string> fams;
    if (c.task == "l1") fams = {"universal", "partial", "specialisation"};
    if (c.task == "deep") fams = {"universal", "specialisation"};
    if (c.task == "l2")
        for (L2Seed s : {L2Seed::Universal, L2Seed::ProductOnly, L2Seed::FirstLayerOnly, L2Seed::PartialFirstLayer, L2Seed::Full})
            fams.insert(l2_seed_name(s));
    for (std::size_t i = 0; i < c.branches.size(); ++i)
        if (!fams.count(c.branches[i]))
            throw ConfigError("branches[" + std::to_string(i) + "]: unknown branch '" + c.branches[i] + "' for task " + c.task);

    if (c.task == "l2" && !(c.gammas.empty() || c.gammas.size() == 2)) throw ConfigError("gammas: l2 needs two entries");
    if (c.task == "deep" && c.gammas.empty()) throw ConfigError("gammas: deep needs one entry per hidden layer");
    if (c.task == "l2" || c.task == "deep") {
        for (auto [field, v] : {std::pair{"activation", c.activation}, std::pair{"activation2", c.activation2}}) {
            if (v.empty()) continue;
            ActivationSpec a = solver_activation(v, c.center);
            if (std::abs(a.mu(2)) > 1e-8 || std::abs(a.second_moment - 1) > 1e-6 ||
                (c.task == "deep" && std::abs(a.mu(1)) > 1e-8))
                throw ConfigError(std::string(field) + ": '" + v + "' is not admissible for task " + c.task);
        }
    }
    if (c.task == "spectrum") {
        static const std::set<std::string> kinds{"generalized_mp", "observation", "rectangular", "marchenko_pastur"};
        if (!kinds.count(c.spectrum)) throw ConfigError("spectrum.kind: unknown kind '" + c.spectrum + "'");
        if (!(c.snr > 0)) throw ConfigError("spectrum.snr: must be positive");
        if (!(c.eta > 0 && c.eta <= 1)) throw ConfigError("spectrum.eta: must lie in (0, 1]");
        if (!(c.ratio > 0)) throw ConfigError("spectrum.ratio: must be positive");
    }
    if (c.task == "simulate" || c.task == "gamp") {
        if (c.d < 2) throw ConfigError("simulation.d: must be at least 2");
        if (c.n_test < 1) throw ConfigError("simulation.n_test: must be positive");
        if (c.chains < 1) throw ConfigError("simulation.chains: must be positive");
        if (c.method != "gamp" && c.method != "metropolis") throw ConfigError("simulation.method: expected gamp or metropolis");
        parse_covariance(c.covariance);
        if (c.task == "simulate" && c.method == "metropolis" && c.weight_prior != "rademacher")
            throw ConfigError("priors.weights: the Metropolis sampler needs binary weights");
        if (c.metropolis.max_sweeps < 1 || c.metropolis.thin < 1) throw ConfigError("simulation.metropolis: sweeps and thin must be positive");
        if (c.gamp.max_iter < 1) throw ConfigError("simulation.gamp.max_iter: must be positive");
    }
}

json config_to_json(const SweepConfig& c) {
    return {{"task", c.task},
            {"activation", c.activation},
            {"activation2", c.activation2},
            {"center", c.center},
            {"priors", {{"weights", c.weight_prior}, {"weights2", c.weight_prior2}, {"readouts", c.readout_prior},
                        {"readout_bins", c.readout_bins}, {"v2_bins", c.v2_bins}}},
            {"gamma", c.gamma},
            {"gammas", c.gammas},
            {"alpha", c.alphas},
            {"delta", c.delta},
            {"channel", c.channel},
            {"seeds", c.seeds},
            {"branches", c.branches},
            {"warm_start", c.warm_start},
            {"refine_alpha_sp", c.refine_alpha_sp},
            {"output", {{"path", c.out}, {"format", c.format}}},
            {"solver", {{"damping", c.solver.damping}, {"tol", c.solver.tol}, {"max_iter", c.solver.max_iter},
                        {"seed_overlap", c.solver.seed_overlap}, {"deep_seed_overlap", c.solver.deep_seed_overlap}, {"nodes", c.solver.potentials.nodes},
                        {"x_min", c.solver.potentials.x_min}, {"x_max", c.solver.potentials.x_max}}},
            {"spectrum", {{"kind", c.spectrum}, {"snr", c.snr}, {"eta", c.eta}, {"ratio", c.ratio}}},
            {"simulation", {{"d", c.d}, {"method", c.method}, {"dataset", c.dataset}, {"covariance", c.covariance},
                            {"n_test", c.n_test}, {"chains", c.chains},
                            {"metropolis", {{"max_sweeps", c.metropolis.max_sweeps}, {"thin", c.metropolis.thin},
                                            {"plateau_window", c.metropolis.plateau_window},
                                            {"plateau_tol", c.metropolis.plateau_tol},
                                            {"init_teacher", c.metropolis.init_teacher}, {"seed", c.metropolis.seed}}},
                            {"gamp", {{"max_iter", c.gamp.max_iter}, {"tol", c.gamp.tol},
                                      {"damping_mean", c.gamp.damping_mean}, {"damping_var", c.gamp.damping_var},
                                      {"refine_linear", c.gamp.refine_linear}}}}}};
}

ShallowInputs shallow_inputs(const SweepConfig& cfg, double alpha) {
    ShallowInputs in;
    in.act = solver_activation(cfg.activation, cfg.center);
    in.pv = make_readout_prior(cfg.readout_prior, cfg.readout_bins);
    in.prior = make_weight_prior(cfg.weight_prior);
    in.gamma = cfg.gamma;
    in.alpha = alpha;
    in.channel = OutputChannel::gaussian(cfg.delta);
    return in;
}

L2Inputs l2_inputs(const SweepConfig& cfg, double alpha) {
    L2Inputs in;
    in.act1 = solver_activation(cfg.activation, cfg.center);
    in.act2 = cfg.activation2.empty() ? in.act1 : solver_activation(cfg.activation2, cfg.center);
    in.pv = make_readout_prior(cfg.readout_prior, cfg.readout_bins);
    in.pv2 = ReadoutPrior::gaussian(cfg.v2_bins);
    in.prior1 = make_weight_prior(cfg.weight_prior);
    in.prior2 = make_weight_prior(cfg.weight_prior2.empty() ? cfg.weight_prior : cfg.weight_prior2);
    in.gamma1 = cfg.gammas.size() == 2 ? cfg.gammas[0] : cfg.gamma;
    in.gamma2 = cfg.gammas.size() == 2 ? cfg.gammas[1] : cfg.gamma;
    in.alpha = alpha;
    in.channel = OutputChannel::gaussian(cfg.delta);
    return in;
}

DeepInputs deep_inputs(const SweepConfig& cfg, double alpha) {
    DeepInputs in;
    in.act = solver_activation(cfg.activation, cfg.center);
    in.pv = make_readout_prior(cfg.readout_prior, cfg.readout_bins);
    in.prior = make_weight_prior(cfg.weight_prior);
    in.gammas = cfg.gammas;
    in.alpha = alpha;
    in.channel = OutputChannel::gaussian(cfg.delta);
    return in;
}

SweepResult compute_sweep(const SweepConfig& cfg) {
    validate_config(cfg);
    SweepResult r;
    if (cfg.task == "l1")
        r = sweep_l1(cfg);
    else if (cfg.task == "l2")
        r = sweep_l2(cfg);
    else if (cfg.task == "deep")
        r = sweep_deep(cfg);
    else if (cfg.task == "spectrum")
        r = sweep_spectrum(cfg);
    else
        throw ConfigError("task: '" + cfg.task + "' produces an experiment report, not a sweep");
    r.task = cfg.task;
    return r;
}

void write_csv(const SweepResult& r, std::ostream& os) {
    if (r.task == "spectrum") {
        os << "value,density\n";
        for (const auto& [x, p] : r.spectrum) os << fmt(x) << ',' << fmt(p) << '\n';
        return;
    }
    // the union of overlap labels, in first-seen order
    std::vector<std::string> cols;
    for (const auto& rec : r.records)
        for (const auto& [k, v] : rec.overlaps)
            if (std::find(cols.begin(), cols.end(), k) == cols.end()) cols.push_back(k);
    os << "alpha,branch,f_rs,eps,K,K_d,converged";
    for (const auto& c : cols) os << ',' << c;
    os << '\n';
    for (const auto& rec : r.records) {
        os << fmt(rec.alpha) << ',' << rec.branch << ',' << fmt(rec.free_entropy) << ',' << fmt(rec.eps) << ','
           << fmt(rec.K) << ',' << fmt(rec.K_d) << ',' << (rec.converged ? 1 : 0);
        for (const auto& c : cols) {
            auto it = std::find_if(rec.overlaps.begin(), rec.overlaps.end(), [&](const auto& p) { return p.first == c; });
            os << ',' << (it == rec.overlaps.end() ? std::string() : fmt(it->second));
        }
        os << '\n';
    }
}

void write_json(const SweepResult& r, std::ostream& os) {
    json j;
    j["task"] = r.task;
    if (r.task == "spectrum") {
        json pts = json::array(), atoms = json::array();
        for (const auto& [x, p] : r.spectrum) pts.push_back({x, p});
        for (const auto& [x, m] : r.atoms) atoms.push_back({{"location", x}, {"mass", m}});
        j["density"] = pts;
        j["atoms"] = atoms;
    } else {
        json recs = json::array();
        for (const auto& rec : r.records) {
            json o = json::object();
            for (const auto& [k, v] : rec.overlaps) o[k] = num(v);
            json e = json::object();
            for (const auto& [k, v] : rec.extra) e[k] = num(v);
            recs.push_back({{"alpha", rec.alpha}, {"branch", rec.branch}, {"reached", rec.reached},
                            {"f_rs", num(rec.free_entropy)}, {"eps", num(rec.eps)}, {"K", num(rec.K)},
                            {"K_d", num(rec.K_d)}, {"converged", rec.converged}, {"iterations", rec.iterations},
                            {"residual", num(rec.residual)}, {"overlaps", o}, {"extra", e}});
        }
        j["records"] = recs;
        json asp = json::object();
        for (const auto& [k, v] : r.alpha_sp) asp[k] = num(v);
        j["alpha_sp"] = asp;
    }
    json f = json::array();
    for (const auto& x : r.failures) f.push_back({{"alpha", x.alpha}, {"branch", x.branch}, {"error", x.error}});
    j["failures"] = f;
    os << j.dump(2) << '\n';
}

namespace {

void write_output(const std::string& path, const std::function<void(std::ostream&)>& emit) {
    if (path.empty()) {
        emit(std::cout);
        std::cout.flush();
        return;
    }
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    emit(out);
    out.flush();
    if (!out) throw IoError("write failed for " + path);
}

void write_manifest(const SweepConfig& cfg, const json& failures) {
    json m = {{"failures", failures}, {"config", config_to_json(cfg)}};
    if (cfg.out.empty()) {
        std::cerr << m.dump(2) << '\n';
        return;
    }
    write_output(cfg.out + ".failures.json", [&](std::ostream& os) { os << m.dump(2) << '\n'; });
}

}  // namespace

SweepResult run_sweep(const SweepConfig& cfg) {
    validate_config(cfg);
    SweepResult r = compute_sweep(cfg);
    write_output(cfg.out, [&](std::ostream& os) {
        if (cfg.format == "csv")
            write_csv(r, os);
        else
            write_json(r, os);
    });
    if (!r.ok()) {
        json f = json::array();
        for (const auto& x : r.failures) f.push_back({{"alpha", x.alpha}, {"branch", x.branch}, {"error", x.error}});
        write_manifest(cfg, f);
    }
    return r;
}

json run_experiment(const SweepConfig& cfg) {
    validate_config(cfg);
    const std::size_t na = cfg.alphas.size(), ns = cfg.seeds.size();
    std::vector<Theory> th(na);
    parallel_for(na, cfg.threads, [&](std::size_t i) { th[i] = theory_point(cfg, cfg.alphas[i]); });

    json report;
    report["config"] = config_to_json(cfg);
    json theory = json::array();
    for (const auto& t : th) theory.push_back(theory_json(t));
    report["theory"] = theory;
    if (ns == 0) {
        report["runs"] = json::array();
        report["summary"] = json::array();
        report["theory_only"] = true;
        return report;
    }

    std::vector<json> runs(na * ns);
    parallel_for(na * ns, cfg.threads, [&](std::size_t t) {
        double a = cfg.alphas[t / ns];
        std::uint64_t seed = cfg.seeds[t % ns];
        try {
            runs[t] = cfg.method == "gamp" ? gamp_run(cfg, a, seed) : metropolis_run(cfg, a, seed);
        } catch (const std::exception& e) {
            runs[t] = {{"alpha", a}, {"seed", seed}, {"method", cfg.method}, {"failed", e.what()}};
        }
    });

    // gamp is compared with the universal branch, the sampler with the branch its initialisation targets
    const bool vs_uni = cfg.method == "gamp" || !cfg.metropolis.init_teacher;
    json out_runs = json::array(), summary = json::array(), failures = json::array();
    for (std::size_t ai = 0; ai < na; ++ai) {
        double ref = vs_uni ? th[ai].eps_uni : th[ai].eps_sp;
        double mean = 0, nish = 0;
        int cnt = 0, ncnt = 0;
        for (std::size_t si = 0; si < ns; ++si) {
            json& r = runs[ai * ns + si];
            if (r.contains("failed")) {
                failures.push_back({{"alpha", cfg.alphas[ai]}, {"seed", cfg.seeds[si]}, {"error", r["failed"]}});
            } else {
                double e = r["error"];
                r["reference"] = num(ref);
                r["relative_deviation"] = num(e / ref - 1.0);
                mean += e;
                ++cnt;
                if (r.contains("nishimori") && r["nishimori"].is_number()) nish += r["nishimori"].get<double>(), ++ncnt;
            }
            out_runs.push_back(r);
        }
        json s = {{"alpha", cfg.alphas[ai]}, {"method", cfg.method}, {"runs", cnt},
                  {"reference_branch", vs_uni ? "universal" : "specialisation"}, {"reference", num(ref)}};
        if (cnt) {
            mean /= cnt;
            s["mean_error"] = mean;
            s["relative_deviation"] = num(mean / ref - 1.0);
        }
        if (ncnt) s["nishimori"] = nish / ncnt;
        summary.push_back(s);
    }
    report["runs"] = out_runs;
    report["summary"] = summary;
    report["failures"] = failures;
    return report;
}

json gamp_report(const Dataset& data, const SweepConfig& cfg) {
    const ActivationSpec& act = data.teacher.arch.act;
    GampFit fit = gamp_rie_fit(data, act, data.delta, cfg.gamp);
    const int d = data.d();
    Eigen::MatrixXd X = sample_inputs(cfg.n_test, d, data.covariance, test_seed(data.seed));
    Eigen::VectorXd truth = forward_batch(data.teacher, X);
    Eigen::VectorXd constant = Eigen::VectorXd::Constant(X.rows(), fit.y0);
    Eigen::VectorXd linear = constant;
    if (!fit.linear_skipped) linear += act.mu(1) * X * fit.S1 / std::sqrt((double)d);
    Eigen::VectorXd full = gamp_rie_predict_batch(fit, X);

    json j;
    j["n"] = data.n();
    j["d"] = d;
    j["alpha"] = (double)data.n() / ((double)d * d);
    j["iterations"] = fit.iterations;
    j["converged"] = fit.converged;
    j["linear_skipped"] = fit.linear_skipped;
    j["quadratic_skipped"] = fit.quadratic_skipped;
    j["stages"] = {{"constant", test_error(constant, truth)}, {"linear", test_error(linear, truth)},
                   {"full", test_error(full, truth)}};
    j["trace"] = fit.trace;
    j["snr_trace"] = fit.snr_trace;
    if (data.teacher.W.size() == 1) {
        try {
            ShallowInputs in;
            in.act = std::abs(act.mu(0)) > 0 ? center_activation(act) : act;
            in.pv = data.readout_prior;
            in.prior = data.weight_prior;
            in.gamma = (double)data.teacher.v.size() / d;
            in.alpha = j["alpha"];
            in.channel = OutputChannel::gaussian(data.delta);
            RSolution u = iterate_l1(in, {Branch::Universal, 0.0}, solver_config(cfg));
            j["theory"] = {{"eps_universal", num(u.eps)}, {"converged", u.converged}};
            if (u.converged && u.eps > 0) j["relative_deviation"] = test_error(full, truth) / u.eps - 1.0;
        } catch (const std::exception& e) {
            j["theory"] = {{"error", e.what()}};
        }
    }
    return j;
}

}  // namespace rsmlp
