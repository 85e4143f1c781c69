#include "doctest.h"

#include "rsmlp/rs_deep.hpp"
#include "rsmlp/rs_shallow.hpp"

#include <cmath>

using namespace rsmlp;

namespace {

ShallowInputs sigma3(double alpha, ReadoutPrior pv = ReadoutPrior::homogeneous()) {
    ShallowInputs in;
    in.act = make_activation("he2+he3/6");
    in.pv = std::move(pv);
    in.prior = WeightPrior::gaussian();
    in.gamma = 0.5;
    in.alpha = alpha;
    in.channel = OutputChannel::gaussian(0.1);
    return in;
}

template <class F>
double normal_mean(F f, int n = 100000) {
    const double L = 12.0, h = 2 * L / n;
    double s = 0;
    for (int i = 0; i <= n; ++i) {
        double z = -L + i * h;
        s += ((i == 0 || i == n) ? 0.5 : 1.0) * f(z) * std::exp(-0.5 * z * z);
    }
    return s * h / std::sqrt(2 * M_PI);
}

}  // namespace

TEST_CASE("odd activation: universal point and inert quadratic sector") {
    ShallowInputs in;
    in.act = make_activation("tanh2");
    in.pv = ReadoutPrior::homogeneous();
    in.prior = WeightPrior::gaussian();
    in.alpha = 1.0;
    RSolution u = iterate_l1(in, {Branch::Universal, 0.0});
    REQUIRE(u.converged);
    for (double q : u.params.Q) CHECK(q == 0.0);
    CHECK(u.params.R2 == 0.0);
    CHECK(u.eps == doctest::Approx(g_cross(in.act, 1.0)).epsilon(1e-9));
    CHECK(u.eps == doctest::Approx(0.10313).epsilon(1e-3));

    RSolution s = iterate_l1(in, {Branch::Specialisation, 0.0});
    REQUIRE(s.converged);
    CHECK(saddle_residual_l1(s.params, in) < 1e-7);
    CHECK(free_entropy_l1(s.params, in) == doctest::Approx(simplified_free_entropy(s.params, in, Ansatz::Sp)).epsilon(1e-8));
}

TEST_CASE("sigma3 fixed points") {
    ShallowInputs in = sigma3(1.0);
    auto sols = solve_all_l1(in);
    const RSolution* uni = nullptr;
    const RSolution* sp = nullptr;
    for (const auto& s : sols) {
        if (!s.converged) continue;
        CHECK(saddle_residual_l1(s.params, in) < 1e-7);
        CHECK(s.K <= s.K_d + 1e-12);
        if (s.seed.branch == Branch::Universal) uni = &s;
        if (s.seed.branch == Branch::Specialisation) sp = &s;
    }
    REQUIRE(uni);
    REQUIRE(sp);
    CHECK(uni->params.R2 - 0.5 == doctest::Approx(0.883).epsilon(0.005 / 0.883));
    CHECK(sp->eps <= uni->eps + 1e-9);

    SUBCASE("stationarity in the conjugates") {
        for (const RSolution* s : {uni, sp}) {
            const double h = 1e-4;
            OrderParamsL1 p = s->params, m = s->params;
            p.R2_hat += h;
            m.R2_hat -= h;
            CHECK(std::abs(free_entropy_l1(p, in) - free_entropy_l1(m, in)) / (2 * h) < 1e-4);
            for (std::size_t i = 0; i < s->params.Q_hat.size(); ++i) {
                p = m = s->params;
                p.Q_hat[i] += h;
                m.Q_hat[i] = std::max(0.0, m.Q_hat[i] - h);
                double step = p.Q_hat[i] - m.Q_hat[i];
                CHECK(std::abs(free_entropy_l1(p, in) - free_entropy_l1(m, in)) / step < 1e-4);
            }
        }
    }
    SUBCASE("selection") {
        RSolution eq = select_branch(sols);
        for (const auto& s : sols)
            if (s.converged) CHECK(eq.free_entropy >= s.free_entropy - 1e-12);
        CHECK(select_branch({*uni}).free_entropy == uni->free_entropy);
        CHECK_THROWS_AS(select_branch({}), ConvergenceError);
    }
}

TEST_CASE("warm start reproduces the cold fixed point") {
    ShallowInputs in = sigma3(1.2);
    RSolution cold = iterate_l1(in, {Branch::Specialisation, 0.0});
    ShallowInputs prev = sigma3(1.1);
    RSolution p = iterate_l1(prev, {Branch::Specialisation, 0.0});
    RSolution warm = iterate_l1_from(in, p.params, {Branch::Specialisation, 0.0});
    REQUIRE(cold.converged);
    REQUIRE(warm.converged);
    CHECK(warm.free_entropy == doctest::Approx(cold.free_entropy).epsilon(1e-8));
    CHECK(warm.params.Q[0] == doctest::Approx(cold.params.Q[0]).epsilon(1e-6));
    CHECK(warm.iterations < cold.iterations);
}

TEST_CASE("alpha monotonicity on a small grid") {
    double prev_eps = INFINITY, prev_f = -INFINITY, prev_mi = -INFINITY;
    for (double a : {0.05, 0.1, 0.2, 0.4}) {
        ShallowInputs in = sigma3(a);
        RSolution u = iterate_l1(in, {Branch::Universal, 0.0});
        REQUIRE(u.converged);
        CHECK(u.eps <= prev_eps + 1e-12);
        prev_eps = u.eps;
        RSolution eq = select_branch(solve_all_l1(in));
        CHECK(eq.free_entropy >= prev_f - 1e-10);
        prev_f = eq.free_entropy;
        // total information per d^2 grows; the per-sample value need not
        double mi = a * mutual_information(eq.free_entropy, 0.1);
        CHECK(mi >= -1e-12);
        CHECK(mi >= prev_mi - 1e-12);
        prev_mi = mi;
    }
}

TEST_CASE("error and information helpers") {
    RSolution s;
    s.K = s.K_d = 0.4;
    CHECK(gen_error(s, OutputChannel::gaussian(0.1)) == 0.0);
    CHECK(gen_error(s, OutputChannel::gaussian(0.1), true) == doctest::Approx(0.1));
    s.K = 0.5;
    CHECK_THROWS(gen_error(s, OutputChannel::gaussian(0.1)));
    CHECK(mutual_information(-0.5 * std::log(2 * M_PI * M_E * 0.3), 0.3) == doctest::Approx(0.0));
    CHECK(default_seeds(ReadoutPrior::homogeneous()).size() == 2);
}

TEST_CASE("two hidden layers") {
    auto act = make_activation("tanh2_normalized");
    const double s = std::sqrt(normal_mean([](double z) { return std::tanh(2 * z) * std::tanh(2 * z); }));
    const double mu1 = normal_mean([s](double z) { return z * std::tanh(2 * z) / s; });
    L2Inputs in;
    in.act1 = in.act2 = act;
    in.pv = ReadoutPrior::homogeneous();
    in.pv2 = ReadoutPrior::gaussian(21);
    in.prior1 = in.prior2 = WeightPrior::gaussian();
    in.gamma1 = in.gamma2 = 0.5;
    in.alpha = 1.5;
    in.channel = OutputChannel::gaussian(0.2);

    SUBCASE("covariance at the corners") {
        OrderParamsL2 p = seed_l2(in, {L2Seed::Universal});
        for (auto& q : p.Q1) q = 0;
        for (auto& q : p.Q2) q = 0;
        for (auto& q : p.Q21) q = 0;
        CHECK(covariance_K_l2(act, act, in.pv, in.pv2, p).K == doctest::Approx(std::pow(mu1, 4)).epsilon(1e-8));
        for (auto& q : p.Q1) q = 1;
        for (auto& q : p.Q2) q = 1;
        for (auto& q : p.Q21) q = 1;
        Covariance c = covariance_K_l2(act, act, in.pv, in.pv2, p);
        CHECK(c.K == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(c.K_d == doctest::Approx(1.0).epsilon(1e-10));
    }
    SUBCASE("universal seed stays universal") {
        L2Solution u = iterate_l2(in, {L2Seed::Universal});
        REQUIRE(u.converged);
        CHECK(u.mean_Q1() == 0.0);
        CHECK(u.mean_Q2() == 0.0);
        CHECK(u.K <= 1.0);
        CHECK(saddle_residual_l2(u.params, in) < 1e-6);
    }
    SUBCASE("without first-layer overlap the deep overlap dies") {
        OrderParamsL2 p = seed_l2(in, {L2Seed::Universal});
        for (auto& q : p.Q2) q = 0.9;
        L2Solution r = iterate_l2_from(in, p);
        REQUIRE(r.converged);
        CHECK(r.mean_Q1() < 1e-9);
        CHECK(r.mean_Q2() < 1e-6);
    }
}

TEST_CASE("deep chain") {
    auto act = make_activation("tanh2_h3");
    DeepInputs in;
    in.act = act;
    in.pv = ReadoutPrior::homogeneous();
    in.prior = WeightPrior::gaussian();
    in.gammas = {1.0, 1.0, 1.0};
    in.alpha = 20;

    OrderParamsDeep p;
    p.Q = {1, 1};
    p.QL = {1};
    CHECK(covariance_K_deep(act, in.pv, p).K == doctest::Approx(1.0).epsilon(1e-10));
    p.Q = {0, 1};
    CHECK(std::abs(covariance_K_deep(act, in.pv, p).K) < 1e-12);

    OrderParamsDeep one;
    one.QL = {0.6};
    CHECK(covariance_K_deep(act, in.pv, one).K ==
          doctest::Approx(covariance_K_l1(act, in.pv, 1.0, 0.0, {0.6}).K).epsilon(1e-10));

    DeepSolution u = iterate_deep(in, Branch::Universal);
    REQUIRE(u.converged);
    for (double q : u.params.Q) CHECK(q == 0.0);

    SolverConfig cfg;
    DeepSolution s = iterate_deep(in, Branch::Specialisation, cfg);
    REQUIRE(s.converged);
    CHECK(saddle_residual_deep(s.params, in) < 1e-6);
    CHECK(s.params.Q[0] >= s.params.Q[1] - 1e-6);
    CHECK(s.params.Q[1] >= s.params.QL[0] - 1e-6);
}
