#include "doctest.h"

#include "rsmlp/hermite.hpp"
#include "rsmlp/quadrature.hpp"

#include <cmath>

using namespace rsmlp;

namespace {

// trapezoid on [-12, 12] against the standard normal density
template <class F>
double normal_mean(F f, int n = 200000) {
    const double L = 12.0, h = 2 * L / n;
    double s = 0;
    for (int i = 0; i <= n; ++i) {
        double z = -L + i * h;
        double w = (i == 0 || i == n) ? 0.5 : 1.0;
        s += w * f(z) * std::exp(-0.5 * z * z);
    }
    return s * h / std::sqrt(2 * M_PI);
}

double relu_kernel(double x) {
    return (std::sqrt(1 - x * x) + (M_PI - std::acos(x)) * x) / (2 * M_PI);
}

}  // namespace

TEST_CASE("quadrature rules integrate polynomials and kinks") {
    const Rule& gh = gauss_hermite(40);
    double m0 = 0, m4 = 0, m6 = 0;
    for (std::size_t i = 0; i < gh.size(); ++i) {
        m0 += gh.w[i];
        m4 += gh.w[i] * std::pow(gh.x[i], 4);
        m6 += gh.w[i] * std::pow(gh.x[i], 6);
    }
    CHECK(m0 == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(m4 == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(m6 == doctest::Approx(15.0).epsilon(1e-12));

    const Rule& gl = gauss_legendre(8);
    double p = 0;
    for (std::size_t i = 0; i < gl.size(); ++i) p += gl.w[i] * std::pow(gl.x[i], 10);
    CHECK(p == doctest::Approx(2.0 / 11.0).epsilon(1e-13));

    double abs_mean = gaussian_mean([](double z) { return std::abs(z); }, {0.0});
    CHECK(abs_mean == doctest::Approx(std::sqrt(2 / M_PI)).epsilon(1e-10));
}

TEST_CASE("Hermite coefficients of the registry") {
    SUBCASE("relu") {
        auto a = make_activation("relu");
        const double c = 1 / std::sqrt(2 * M_PI);
        CHECK(a.mu(0) == doctest::Approx(c).epsilon(1e-9));
        CHECK(a.mu(1) == doctest::Approx(0.5).epsilon(1e-9));
        CHECK(a.mu(2) == doctest::Approx(c).epsilon(1e-9));
        CHECK(std::abs(a.mu(3)) < 1e-9);
        CHECK(a.mu(4) == doctest::Approx(-c).epsilon(1e-8));
        CHECK(a.second_moment == doctest::Approx(0.5).epsilon(1e-10));
    }
    SUBCASE("tanh2 against an independent trapezoid") {
        auto a = make_activation("tanh2");
        auto he3 = [](double z) { return z * z * z - 3 * z; };
        auto he5 = [](double z) { return std::pow(z, 5) - 10 * std::pow(z, 3) + 15 * z; };
        CHECK(a.mu(1) == doctest::Approx(normal_mean([](double z) { return z * std::tanh(2 * z); })).epsilon(1e-8));
        CHECK(a.mu(3) == doctest::Approx(normal_mean([&](double z) { return he3(z) * std::tanh(2 * z); })).epsilon(1e-7));
        CHECK(a.mu(5) == doctest::Approx(normal_mean([&](double z) { return he5(z) * std::tanh(2 * z); })).epsilon(1e-6));
        CHECK(a.mu(1) == doctest::Approx(0.72948).epsilon(1e-4));
        CHECK(a.mu(3) == doctest::Approx(-0.61398).epsilon(1e-4));
        CHECK(a.mu(5) == doctest::Approx(1.5632).epsilon(1e-4));
        CHECK(a.second_moment == doctest::Approx(0.63526).epsilon(1e-4));
        for (int k = 0; k <= 8; k += 2) CHECK(std::abs(a.mu(k)) < 1e-10);
    }
    SUBCASE("he2 and the sigma3 mixture") {
        auto a = make_activation("he2");
        CHECK(a.mu(2) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-10));
        for (int k : {0, 1, 3, 4, 5}) CHECK(std::abs(a.mu(k)) < 1e-10);
        CHECK(a.second_moment == doctest::Approx(1.0).epsilon(1e-10));
        auto s3 = make_activation("he2+he3/6");
        CHECK(s3.mu(3) == doctest::Approx(1.0).epsilon(1e-10));
        CHECK(s3.second_moment == doctest::Approx(1.0 + 6.0 / 36.0).epsilon(1e-10));
    }
    SUBCASE("normalised variants") {
        for (const char* n : {"tanh2_normalized", "tanh2_h3"}) {
            auto a = make_activation(n);
            CHECK(a.second_moment == doctest::Approx(1.0).epsilon(1e-10));
            CHECK(std::abs(a.mu(2)) < 1e-10);
        }
        CHECK(std::abs(make_activation("tanh2_h3").mu(1)) < 1e-10);
    }
    CHECK_THROWS_AS(make_activation("softplus"), std::invalid_argument);
}

TEST_CASE("truncated Hermite sums approach the second moment from below") {
    auto a = make_activation("tanh2");
    double s = 0, f = 1, prev = -1;
    for (int l = 0; l < (int)a.coefficients.size(); ++l) {
        if (l) f *= l;
        s += a.mu(l) * a.mu(l) / f;
        CHECK(s >= prev);
        CHECK(s <= a.second_moment + 1e-12);
        prev = s;
    }
}

TEST_CASE("centring") {
    auto c = center_activation(make_activation("relu"));
    CHECK(std::abs(c.mu(0)) < 1e-14);
    CHECK(c.second_moment == doctest::Approx(0.5 - 1 / (2 * M_PI)).epsilon(1e-10));
    CHECK(normal_mean([&](double z) { return c.eval(z); }) == doctest::Approx(0.0).epsilon(1e-8));
    auto t = make_activation("tanh2");
    auto tc = center_activation(t);
    CHECK(tc.second_moment == doctest::Approx(t.second_moment).epsilon(1e-12));
    CHECK(tc.eval(0.3) == doctest::Approx(t.eval(0.3)));
    auto k = hermite_coefficients("const", [](double) { return 2.0; });
    auto kc = center_activation(k);
    CHECK(std::abs(kc.second_moment) < 1e-10);
    for (double m : kc.coefficients) CHECK(std::abs(m) < 1e-10);
}

TEST_CASE("kernel and g against closed forms") {
    auto relu = make_activation("relu");
    for (double x : {-0.9, -0.4, 0.0, 0.3, 0.7, 0.99})
        CHECK(gaussian_kernel(relu, x) == doctest::Approx(relu_kernel(x)).epsilon(1e-7));
    auto he3 = make_activation("he3");
    for (double x : {-0.8, 0.2, 0.6, 1.0}) CHECK(g_cross(he3, x) == doctest::Approx(x * x * x).epsilon(1e-9));
    for (const auto& n : activation_names()) CHECK(std::abs(g_cross(make_activation(n), 0.0)) < 1e-10);

    auto t = make_activation("tanh2");
    CHECK(g_cross(t, 1.0) == doctest::Approx(t.second_moment - t.mu(1) * t.mu(1)).epsilon(1e-9));
    CHECK(g_cross(t, 1.0) == doctest::Approx(0.10313).epsilon(1e-3));
    auto cr = center_activation(relu);
    double want = 0.5 - 1 / (2 * M_PI) - 0.25 - 1 / (4 * M_PI);
    CHECK(g_cross(cr, 1.0) == doctest::Approx(want).epsilon(1e-8));
    CHECK(g_cross(cr, 1.0) == doctest::Approx(0.011269).epsilon(1e-3));

    // g' against central differences of the relu kernel
    for (double x : {0.1, 0.5, 0.8}) {
        double h = 1e-5;
        double fd = (relu_kernel(x + h) - relu_kernel(x - h)) / (2 * h) - 0.25 - relu.mu(2) * relu.mu(2) * x;
        CHECK(g_cross_derivative(relu, x) == doctest::Approx(fd).epsilon(1e-6));
    }
}

TEST_CASE("g is non-decreasing and convex on [0, 1]") {
    for (const auto& n : activation_names()) {
        GTable gt(make_activation(n));
        double prev = gt.g(0), prev_slope = -1;
        for (int i = 1; i <= 50; ++i) {
            double x = i / 50.0, v = gt.g(x);
            double slope = (v - prev) * 50;
            CHECK(v >= prev - 1e-12);
            CHECK(slope >= prev_slope - 1e-8);
            prev = v;
            prev_slope = slope;
        }
    }
}

TEST_CASE("readout laws") {
    auto g = ReadoutPrior::gaussian(21);
    double ps = 0;
    for (double p : g.probs) ps += p;
    CHECK(ps == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::abs(g.mean()) < 1e-12);
    CHECK(g.second_moment() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(ReadoutPrior::rademacher().second_moment() == doctest::Approx(1.0));
    CHECK(ReadoutPrior::homogeneous().mean() == doctest::Approx(1.0));
    CHECK_THROWS(make_readout_prior("laplace"));

    auto b = bin_effective_readouts(21);
    CHECK(b.second_moment() >= 0.98);
    CHECK(b.second_moment() < 1.0);
    for (std::size_t i = 0; i < b.size(); ++i) {
        CHECK(b.probs[i] == doctest::Approx(1.0 / 21).epsilon(1e-12));
        CHECK(b.values[i] == doctest::Approx(-b.values[b.size() - 1 - i]).epsilon(1e-12));
    }
}

TEST_CASE("covariance of the one-layer readout") {
    auto t = make_activation("tanh2");
    auto pv = ReadoutPrior::homogeneous();
    Covariance c0 = covariance_K_l1(t, pv, 0.5, 0.0, {0.0});
    CHECK(c0.K == doctest::Approx(t.mu(1) * t.mu(1)).epsilon(1e-10));
    CHECK(c0.K == doctest::Approx(0.53214).epsilon(1e-4));
    CHECK(c0.K_d == doctest::Approx(0.63526).epsilon(1e-4));

    auto cr = center_activation(make_activation("relu"));
    Covariance c1 = covariance_K_l1(cr, pv, 0.5, 0.0, {0.0});
    CHECK(c1.K_d == doctest::Approx(0.25 + 0.75 / (2 * M_PI) + 0.5 - 1 / (2 * M_PI) - 0.25 - 1 / (4 * M_PI)).epsilon(1e-8));
    CHECK(c1.K_d == doctest::Approx(0.38063).epsilon(1e-4));

    for (const auto& n : activation_names()) {
        auto a = center_activation(make_activation(n));
        for (auto p : {ReadoutPrior::homogeneous(), ReadoutPrior::rademacher(), ReadoutPrior::gaussian(21)}) {
            const double gam = 0.5, vb = p.mean();
            Covariance c = covariance_K_l1(a, p, gam, 1 + gam * vb * vb, std::vector<double>(p.size(), 1.0));
            CHECK(std::abs(c.K - c.K_d) < 1e-10);
        }
    }
}
