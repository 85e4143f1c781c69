// End-to-end acceptance checks. One PASS/FAIL line per criterion; arguments select criteria (default all).
#include "rsmlp/gamp_rie.hpp"
#include "rsmlp/potentials.hpp"
#include "rsmlp/rs_deep.hpp"
#include "rsmlp/rs_shallow.hpp"
#include "rsmlp/spectral.hpp"
#include "rsmlp/sweep.hpp"
#include "rsmlp/teacher_student.hpp"

#include <Eigen/Eigenvalues>

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

using namespace rsmlp;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
    void check(bool ok, const std::string& what) {
        pass = pass && ok;
        if (!detail.empty()) detail += "; ";
        detail += what + (ok ? "" : " [x]");
    }
};

std::string fmt(const char* f, ...) {
    char buf[512];
    va_list ap;
    va_start(ap, f);
    std::vsnprintf(buf, sizeof buf, f, ap);
    va_end(ap);
    return buf;
}

SolverConfig solver() {
    SolverConfig c;
    c.potentials.cache_dir = RSMLP_CACHE_DIR;
    return c;
}

double rel(double a, double b) { return std::abs(a / b - 1.0); }

ShallowInputs relu_setting(const ReadoutPrior& pv) {
    ShallowInputs in;
    in.act = center_activation(make_activation("relu"));
    in.pv = pv;
    in.prior = WeightPrior::gaussian();
    in.gamma = 0.5;
    in.channel = OutputChannel::gaussian(1e-4);
    return in;
}

ShallowInputs sigma3_setting(const ReadoutPrior& pv) {
    ShallowInputs in;
    in.act = make_activation("he2+he3/6");
    in.pv = pv;
    in.prior = WeightPrior::gaussian();
    in.gamma = 0.5;
    in.alpha = 1.0;
    in.channel = OutputChannel::gaussian(0.1);
    return in;
}

Outcome anchors() {
    Outcome o;
    ShallowInputs in = relu_setting(ReadoutPrior::homogeneous());
    in.alpha = 5;
    RSolution u = iterate_l1(in, {Branch::Universal}, solver());
    RSolution eq = select_branch(solve_all_l1(in, solver()));
    o.check(u.converged && rel(u.eps, 1.217e-2) < 0.01, fmt("eps_uni-D=%.5g (1.217e-2, 1%%)", u.eps));
    o.check(eq.converged && rel(eq.eps, 1.115e-5) < 0.10,
            fmt("eps_opt-D=%.5g (1.115e-5, 10%%) via %s", eq.eps, branch_name(eq.branch).c_str()));
    return o;
}

Outcome overlaps() {
    Outcome o;
    struct Row { const char* pv; double uni, sp, tol; };
    for (Row r : {Row{"homogeneous", 0.883, 0.941, 0.005}, Row{"rademacher", 0.868, 0.948, 0.01},
                  Row{"gaussian", 0.903, 0.963, 0.01}}) {
        ShallowInputs in = sigma3_setting(make_readout_prior(r.pv));
        const double shift = in.gamma * in.pv.mean() * in.pv.mean();
        RSolution u = iterate_l1(in, {Branch::Universal}, solver());
        RSolution s = iterate_l1(in, {Branch::Specialisation}, solver());
        double ru = u.params.R2 - shift, rs = s.params.R2 - shift;
        o.check(u.converged && std::abs(ru - r.uni) <= r.tol, fmt("%s R2_uni=%.4f (%.3f)", r.pv, ru, r.uni));
        o.check(s.converged && std::abs(rs - r.sp) <= r.tol, fmt("%s R2_sp=%.4f (%.3f)", r.pv, rs, r.sp));
    }
    return o;
}

Outcome thresholds() {
    Outcome o;
    struct Row { const char* pv; double relu, s3; };
    for (Row r : {Row{"homogeneous", 0.22, 0.26}, Row{"rademacher", 0.12, 0.30}, Row{"gaussian", 0.02, 0.02}}) {
        double a = alpha_sp(relu_setting(make_readout_prior(r.pv)), 0.005, 1.0, TransitionRule::Full, solver());
        o.check(std::abs(a - r.relu) <= 0.03, fmt("relu %s %.4f (%.2f)", r.pv, a, r.relu));
        double b = alpha_sp(sigma3_setting(make_readout_prior(r.pv)), 0.005, 1.0, TransitionRule::Full, solver());
        o.check(std::abs(b - r.s3) <= 0.03, fmt("sigma3 %s %.4f (%.2f)", r.pv, b, r.s3));
    }
    return o;
}

Outcome semicircle() {
    Outcome o;
    SpectralDensity y = symmetric_observation_density(0.5, ReadoutPrior::homogeneous(), 0.0);
    double c = 4 * M_PI * M_PI / 3 * y.cubic_integral();
    o.check(std::abs(c - 1) < 1e-6, fmt("(4pi^2/3)int rho^3 = 1%+.2e", c - 1));
    double worst_s = 0, worst_r = 0;
    auto sym = DenoisingPotential::symmetric(0.5, ReadoutPrior::homogeneous(), solver().potentials);
    auto rect = DenoisingPotential::rectangular(0.25, 0.5, solver().potentials);
    for (double x : {0.05, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0, 100.0}) {
        double h = 1e-3 * x;
        worst_s = std::max(worst_s, std::abs(4 * (sym->iota(x + h) - sym->iota(x - h)) / (2 * h) - sym->direct_mmse(x)));
        worst_r = std::max(worst_r, std::abs(2 * (rect->iota(x + h) - rect->iota(x - h)) / (2 * h) - rect->direct_mmse(x)));
    }
    o.check(worst_s < 1e-3, fmt("max|4iota'-mmse_S|=%.2e", worst_s));
    o.check(worst_r < 1e-3, fmt("max|2iota'-mmse|=%.2e", worst_r));
    return o;
}

Eigen::MatrixXd normal(int r, int c, std::mt19937_64& rng) {
    std::normal_distribution<double> g;
    Eigen::MatrixXd M(r, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) M(i, j) = g(rng);
    return M;
}

// Rotation-invariant oracle: eigenvectors of the observation, eigenvalues fitted to the truth.
double mc_symmetric(int d, double gamma, double x, std::mt19937_64& rng) {
    const int k = (int)std::lround(gamma * d);
    Eigen::MatrixXd W = normal(k, d, rng);
    Eigen::MatrixXd S = W.transpose() * W / std::sqrt((double)k * d);
    Eigen::MatrixXd A = normal(d, d, rng);
    Eigen::MatrixXd Y = std::sqrt(x) * S + (A + A.transpose()) / std::sqrt(2.0 * d);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Y);
    const Eigen::MatrixXd& U = es.eigenvectors();
    Eigen::VectorXd xi = (U.transpose() * S * U).diagonal();
    return (S - U * xi.asDiagonal() * U.transpose()).squaredNorm() / d;
}

double mc_rectangular(int d, double eta, double gamma, double x, std::mt19937_64& rng) {
    const int p = (int)std::lround(eta * d), k = (int)std::lround(gamma * d);
    Eigen::MatrixXd S = normal(p, k, rng) * normal(k, d, rng) / std::sqrt((double)k);
    Eigen::MatrixXd Y = std::sqrt(x) * S + normal(p, d, rng);
    Eigen::BDCSVD<Eigen::MatrixXd> svd(Y, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const Eigen::MatrixXd &U = svd.matrixU(), &V = svd.matrixV();
    Eigen::VectorXd xi = (U.transpose() * S * V).diagonal();
    return (S - U * xi.asDiagonal() * V.transpose()).squaredNorm() / ((double)p * d);
}

Outcome monte_carlo() {
    Outcome o;
    std::mt19937_64 rng(2024);
    for (double x : {0.1, 0.5, 1.0, 2.0, 5.0}) {
        double th = mmse_symmetric(x, symmetric_observation_density(0.5, ReadoutPrior::homogeneous(), x));
        double mc = 0.5 * (mc_symmetric(500, 0.5, x, rng) + mc_symmetric(500, 0.5, x, rng));
        o.check(rel(mc, th) < 0.05, fmt("sym x=%g %.4f/%.4f", x, mc, th));
    }
    for (double x : {0.1, 0.5, 1.0, 2.0, 5.0}) {
        double th = mmse_rectangular(x, 0.25, 0.5, rectangular_density(x, 0.25, 0.5));
        double mc = 0.5 * (mc_rectangular(800, 0.25, 0.5, x, rng) + mc_rectangular(800, 0.25, 0.5, x, rng));
        o.check(rel(mc, th) < 0.07, fmt("rect x=%g %.4f/%.4f", x, mc, th));
    }
    return o;
}

Outcome gamp() {
    Outcome o;
    const int d = 150, seeds = 10;
    auto relu = make_activation("relu");
    Architecture a;
    a.d = d;
    a.widths = {d / 2};
    a.act = relu;
    for (double alpha : {1.0, 2.0, 3.0}) {
        ShallowInputs in = relu_setting(ReadoutPrior::homogeneous());
        in.alpha = alpha;
        in.channel = OutputChannel::gaussian(0.1);
        RSolution u = iterate_l1(in, {Branch::Universal}, solver());
        double mean = 0;
        for (int s = 0; s < seeds; ++s) {
            Dataset ds = generate_dataset(a, WeightPrior::gaussian(), ReadoutPrior::homogeneous(),
                                          (int)std::lround(alpha * d * d), 0.1, {}, 100 + s);
            GampFit f = gamp_rie_fit(ds, relu, 0.1);
            Eigen::MatrixXd X = sample_inputs(5000, d, {}, 777 + s);
            mean += (gamp_rie_predict_batch(f, X) - forward_batch(ds.teacher, X)).squaredNorm() / X.rows() / seeds;
        }
        o.check(rel(mean, u.eps) < 0.05, fmt("alpha=%g %.5f vs %.5f (%+.1f%%)", alpha, mean, u.eps, 100 * (mean / u.eps - 1)));
    }
    return o;
}

Outcome metropolis() {
    Outcome o;
    const int d = 100;
    const double delta = 1.25;
    ShallowInputs in = sigma3_setting(ReadoutPrior::homogeneous());
    in.prior = WeightPrior::rademacher();
    in.channel = OutputChannel::gaussian(delta);
    RSolution sp = iterate_l1(in, {Branch::Specialisation}, solver());
    Architecture a;
    a.d = d;
    a.widths = {d / 2};
    a.act = in.act;
    Dataset ds = generate_dataset(a, WeightPrior::rademacher(), ReadoutPrior::homogeneous(), d * d, delta, {}, 11);
    MetropolisConfig c;
    c.max_sweeps = 600;
    c.thin = 5;
    c.plateau_window = 0;
    c.init_teacher = true;
    c.seed = 3;
    MetropolisResult r1 = metropolis_sample(ds, c);
    c.seed = 4;
    MetropolisResult r2 = metropolis_sample(ds, c);
    double hg = 0;
    int cnt = 0;
    for (const auto* r : {&r1, &r2})
        for (int s = r->sweeps / 2; s < r->sweeps; ++s, ++cnt) hg += r->half_gibbs[s];
    hg /= cnt;
    o.check(rel(hg, sp.eps) < 0.10, fmt("half-Gibbs %.4f vs eps_sp %.4f (Delta=%g)", hg, sp.eps, delta));
    std::vector<double> nd = nishimori_deviation(r1, r2, ds.teacher, sample_inputs(4000, d, {}, 999));
    double m = 0;
    int q = 0;
    for (std::size_t t = 3 * nd.size() / 4; t < nd.size(); ++t, ++q) m += nd[t];
    m /= std::max(q, 1);
    o.check(std::abs(m) < 0.1, fmt("Nishimori final quartile %+.4f", m));
    return o;
}

Outcome saturation() {
    Outcome o;
    ShallowInputs in = relu_setting(ReadoutPrior::homogeneous());
    in.prior = WeightPrior::rademacher();
    in.channel = OutputChannel::gaussian(0.1);
    in.alpha = 50;
    RSolution s = select_branch(solve_all_l1(in, solver()));
    double per_weight = in.alpha / in.gamma * mutual_information(s.free_entropy, 0.1);
    o.check(rel(per_weight, M_LN2) < 0.02, fmt("MI/weight %.5f vs ln2 %.5f", per_weight, M_LN2));
    return o;
}

Outcome deep() {
    Outcome o;
    std::vector<double> grid;
    for (int i = 0; i <= 11; ++i) grid.push_back(2.3 + 0.1 * i);
    for (const char* rd : {"gaussian", "homogeneous"}) {
        L2Inputs in;
        in.act1 = in.act2 = make_activation("tanh2_normalized");
        in.pv = make_readout_prior(rd, 21);
        in.pv2 = ReadoutPrior::gaussian(21);
        in.prior1 = in.prior2 = WeightPrior::gaussian();
        in.gamma1 = in.gamma2 = 0.5;
        in.channel = OutputChannel::gaussian(0.2);
        double t = l2_transition_alpha(in, grid, 0.5, solver());
        o.check(std::abs(t - 2.8) <= 0.3, fmt("L=2 %s readouts transition %.3f", rd, t));
    }
    // post-transition chains under the cubic activation
    SolverConfig c = solver();
    double worst_order = -INFINITY, worst_depth = -INFINITY;
    bool all_conv = true;
    for (double alpha : {20.0, 40.0, 80.0}) {
        std::vector<std::vector<double>> Q(6);
        for (int L = 1; L <= 5; ++L) {
            DeepInputs d;
            d.act = make_activation("tanh2_h3");
            d.pv = make_readout_prior("homogeneous", 1);
            d.prior = WeightPrior::gaussian();
            d.gammas.assign(L, 1.0);
            d.alpha = alpha;
            d.channel = OutputChannel::gaussian(0.1);
            DeepSolution s = iterate_deep(d, Branch::Specialisation, c);
            all_conv = all_conv && s.converged;
            Q[L] = s.params.Q;
            double last = 0;
            for (double q : s.params.QL) last += q / s.params.QL.size();
            Q[L].push_back(last);
            for (int l = 1; l < L; ++l) worst_order = std::max(worst_order, Q[L][l] - Q[L][l - 1]);
            if (L > 1)
                for (int l = 0; l + 1 < L; ++l) worst_depth = std::max(worst_depth, Q[L][l + 1] - Q[L - 1][l]);
        }
    }
    o.check(all_conv, "deep fixed points converged");
    o.check(worst_order <= 1e-6, fmt("max(Q_{l+1}-Q_l)=%.2e", worst_order));
    o.check(worst_depth <= 1e-6, fmt("max(Q^(L+1)_{l+1}-Q^(L)_l)=%.2e", worst_depth));
    return o;
}

Outcome simplified_equivalence() {
    Outcome o;
    ShallowInputs in;
    in.act = center_activation(make_activation("tanh2"));
    in.pv = ReadoutPrior::homogeneous();
    in.prior = WeightPrior::gaussian();
    in.gamma = 0.5;
    in.channel = OutputChannel::gaussian(0.1);
    double worst = 0;
    for (double alpha : {0.5, 1.0, 2.0, 5.0, 10.0}) {
        in.alpha = alpha;
        RSolution full = select_branch(solve_all_l1(in, solver()));
        RSolution sp = iterate_simplified(in, Ansatz::Sp, {Branch::Specialisation}, solver());
        RSolution uni = iterate_simplified(in, Ansatz::Uni, {Branch::Universal}, solver());
        double simple = std::max(sp.converged ? sp.free_entropy : -INFINITY, uni.converged ? uni.free_entropy : -INFINITY);
        worst = std::max(worst, std::abs(full.free_entropy - simple));
    }
    o.check(worst < 1e-6, fmt("max|f_RS - f_simplified|=%.2e", worst));
    return o;
}

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome invariants() {
    Outcome o;
    double worst = 0;
    bool conv = true;
    for (const char* pv : {"homogeneous", "rademacher", "gaussian"}) {
        ShallowInputs in = sigma3_setting(make_readout_prior(pv));
        for (const RSolution& s : solve_all_l1(in, solver())) {
            if (!s.converged) continue;
            worst = std::max(worst, saddle_residual_l1(s.params, in, solver()));
        }
        ShallowInputs r = relu_setting(make_readout_prior(pv));
        r.alpha = 2.0;
        for (const RSolution& s : solve_all_l1(r, solver()))
            if (s.converged) worst = std::max(worst, saddle_residual_l1(s.params, r, solver()));
    }
    L2Inputs l2;
    l2.act1 = l2.act2 = make_activation("tanh2_normalized");
    l2.pv = ReadoutPrior::homogeneous();
    l2.pv2 = ReadoutPrior::gaussian(21);
    l2.prior1 = l2.prior2 = WeightPrior::gaussian();
    l2.alpha = 3.0;
    l2.channel = OutputChannel::gaussian(0.2);
    for (const L2Solution& s : solve_all_l2(l2, solver()))
        if (s.converged) worst = std::max(worst, saddle_residual_l2(s.params, l2, solver()));
    o.check(conv && worst < 1e-7, fmt("max saddle residual %.2e", worst));

    double mass = 0;
    for (auto pv : {ReadoutPrior::homogeneous(), ReadoutPrior::rademacher(), ReadoutPrior::gaussian(21)}) {
        mass = std::max(mass, std::abs(generalized_mp_density(0.5, pv).mass() - 1));
        mass = std::max(mass, std::abs(symmetric_observation_density(0.5, pv, 2.0).mass() - 1));
    }
    for (double x : {0.0, 1.0, 10.0}) mass = std::max(mass, std::abs(rectangular_density(x, 0.25, 0.5).mass() - 1));
    mass = std::max(mass, std::abs(marchenko_pastur_density(0.5).mass() - 1));
    o.check(mass < 1e-6, fmt("max|mass-1|=%.2e", mass));

    bool mono = true;
    for (auto pot : {DenoisingPotential::symmetric(0.5, ReadoutPrior::homogeneous(), solver().potentials),
                     DenoisingPotential::symmetric(0.5, ReadoutPrior::gaussian(21), solver().potentials),
                     DenoisingPotential::rectangular(0.25, 0.5, solver().potentials)}) {
        const auto& m = pot->mmse_values();
        for (std::size_t i = 1; i < m.size(); ++i) mono = mono && m[i] < m[i - 1];
    }
    o.check(mono, "mmse curves decreasing");

    SweepConfig cfg;
    cfg.task = "l1";
    cfg.activation = "he2+he3/6";
    cfg.readout_prior = "homogeneous";
    cfg.gamma = 0.5;
    cfg.delta = 0.1;
    cfg.alphas = {0.5, 1.0};
    cfg.solver = solver();
    std::string golden = slurp(std::string(RSMLP_TEST_DATA) + "/l1_sigma3.csv");
    std::ostringstream a, b;
    write_csv(compute_sweep(cfg), a);
    cfg.threads = 2;
    write_csv(compute_sweep(cfg), b);
    o.check(!golden.empty() && a.str() == golden && b.str() == golden, "CSV matches golden file, 1 and 2 threads");
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    setvbuf(stdout, nullptr, _IOLBF, 0);
    std::vector<std::pair<const char*, std::function<Outcome()>>> all = {
        {"anchor errors", anchors},
        {"overlap anchors", overlaps},
        {"specialisation thresholds", thresholds},
        {"semicircle and I-MMSE", semicircle},
        {"Monte-Carlo spectral oracle", monte_carlo},
        {"GAMP-RIE end to end", gamp},
        {"Metropolis validation", metropolis},
        {"large-alpha saturation", saturation},
        {"deep properties", deep},
        {"simplified ansatz at mu2 = 0", simplified_equivalence},
        {"invariant suites", invariants},
    };
    std::set<int> pick;
    for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));
    int failed = 0;
    for (std::size_t i = 0; i < all.size(); ++i) {
        int id = (int)i + 1;
        if (!pick.empty() && !pick.count(id)) continue;
        auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = all[i].second();
        } catch (const std::exception& e) {
            o.check(false, std::string("exception: ") + e.what());
        }
        double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s %d %s: %s (%.0fs)\n", o.pass ? "PASS" : "FAIL", id, all[i].first, o.detail.c_str(), sec);
        failed += !o.pass;
    }
    return failed ? 1 : 0;
}
