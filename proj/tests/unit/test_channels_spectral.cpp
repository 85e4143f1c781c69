#include "doctest.h"

#include "rsmlp/potentials.hpp"
#include "rsmlp/scalar_channels.hpp"
#include "rsmlp/spectral.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <cmath>
#include <random>

using namespace rsmlp;

namespace {

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

Eigen::MatrixXd gaussian(int r, int c, std::mt19937_64& rng) {
    std::normal_distribution<double> n;
    Eigen::MatrixXd m(r, c);
    for (int j = 0; j < c; ++j)
        for (int i = 0; i < r; ++i) m(i, j) = n(rng);
    return m;
}

// semicircle on [-2, 2]
Eigen::MatrixXd goe(int d, std::mt19937_64& rng) {
    Eigen::MatrixXd g = gaussian(d, d, rng);
    return (g + g.transpose()) / std::sqrt(2.0 * d);
}

}  // namespace

TEST_CASE("scalar prior channel") {
    auto G = WeightPrior::gaussian();
    auto R = WeightPrior::rademacher();
    CHECK(psi_prior(G, 0.0) == doctest::Approx(0.0));
    CHECK(psi_prior(R, 0.0) == doctest::Approx(0.0));
    CHECK(psi_prior(G, 1.0) == doctest::Approx((1 - std::log(2.0)) / 2).epsilon(1e-9));
    CHECK(psi_prior(R, 3.0) ==
          doctest::Approx(-1.5 + normal_mean([](double z) { return std::log(std::cosh(3 + std::sqrt(3.0) * z)); })).epsilon(1e-8));
    CHECK(overlap_update(G, 0.0) == doctest::Approx(0.0));
    CHECK(overlap_update(R, 0.0) == doctest::Approx(0.0));
    CHECK(overlap_update(G, 1.0) == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(overlap_update(R, 2.0) ==
          doctest::Approx(normal_mean([](double z) { return std::tanh(2 + std::sqrt(2.0) * z); })).epsilon(1e-8));
    for (const auto& p : {G, R}) CHECK(overlap_update(p, 1e6) >= 0.999);

    for (const auto& p : {G, R}) {
        double prev = 0, prev_slope = 0;
        for (int i = 1; i <= 40; ++i) {
            double x = 0.25 * i, v = psi_prior(p, x);
            CHECK(v >= prev - 1e-12);
            double slope = (v - prev) / 0.25;
            CHECK(slope >= prev_slope - 1e-8);
            prev = v;
            prev_slope = slope;
            double h = 1e-4;
            double fd = 2 * (psi_prior(p, x + h) - psi_prior(p, x - h)) / (2 * h);
            CHECK(overlap_update(p, x) == doctest::Approx(fd).epsilon(1e-5));
        }
    }
    CHECK(psi_prior(R, 1e3) - 500.0 == doctest::Approx(-std::log(2.0)).epsilon(1e-3));
    CHECK(R.entropy() == doctest::Approx(std::log(2.0)));
}

TEST_CASE("Gaussian output channel") {
    auto c1 = OutputChannel::gaussian(1.0);
    CHECK(phi_out(c1, 0.7, 0.7) == doctest::Approx(-0.5 * std::log(2 * M_PI * M_E)).epsilon(1e-10));
    CHECK(phi_out(c1, 0.7, 0.7) == doctest::Approx(-1.418939).epsilon(1e-6));
    auto c2 = OutputChannel::gaussian(0.1);
    CHECK(phi_out(c2, 0.0, 1.0) == doctest::Approx(-0.5 * std::log(2 * M_PI * M_E * 1.1)).epsilon(1e-10));
    CHECK(phi_out(c2, 0.0, 1.0) == doctest::Approx(-1.466595).epsilon(1e-6));
    CHECK(phi_out(c2, 0.3, 0.9) == doctest::Approx(phi_out(c2, 0.3 + 0.4, 0.9 + 0.4)).epsilon(1e-12));
    const double delta = 0.3;
    auto gen = OutputChannel::generic(
        [delta](double y, double l) { return std::exp(-(y - l) * (y - l) / (2 * delta)) / std::sqrt(2 * M_PI * delta); },
        std::sqrt(delta));
    auto g = OutputChannel::gaussian(delta);
    CHECK(phi_out(gen, 0.4, 1.0) == doctest::Approx(phi_out(g, 0.4, 1.0)).epsilon(1e-6));
    CHECK_THROWS(OutputChannel::gaussian(0.0));
}

TEST_CASE("structured-input prior term") {
    SpectralDensity point;
    point.atoms = {{1.0, 1.0}};
    for (double x : {0.0, 0.5, 2.0}) CHECK(psi_structured(point, x) == doctest::Approx(0.5 * (x - std::log1p(x))).epsilon(1e-12));

    // Marchenko-Pastur covariance, d0/d = 2: C = W0 W0^T / d0 with W0 d x d0
    SpectralDensity mp = marchenko_pastur_density(0.5);
    std::mt19937_64 rng(5);
    const int d = 600, d0 = 1200;
    Eigen::MatrixXd W = gaussian(d, d0, rng);
    Eigen::MatrixXd C = W * W.transpose() / d0;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C, Eigen::EigenvaluesOnly);
    double mc = 0;
    for (int i = 0; i < d; ++i) mc += 0.5 * (es.eigenvalues()[i] - std::log1p(es.eigenvalues()[i])) / d;
    CHECK(psi_structured(mp, 1.0) == doctest::Approx(mc).epsilon(5e-3));
}

TEST_CASE("spectral densities") {
    SUBCASE("generalised Marchenko-Pastur") {
        for (auto pv : {ReadoutPrior::homogeneous(), ReadoutPrior::rademacher(), ReadoutPrior::gaussian(21)}) {
            SpectralDensity r = generalized_mp_density(0.5, pv);
            CHECK(r.mass() == doctest::Approx(1.0).epsilon(1e-6));
            for (double p : r.density) CHECK(p >= 0);
            CHECK(r.moment(2) == doctest::Approx(1.0 + 0.5 * pv.mean() * pv.mean()).epsilon(2e-3));
        }
    }
    SUBCASE("pure noise is a semicircle") {
        SpectralDensity y = symmetric_observation_density(0.5, ReadoutPrior::rademacher(), 0.0);
        CHECK(y.mass() == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(y.moment(2) == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(4 * M_PI * M_PI / 3 * y.cubic_integral() == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(std::abs(mmse_symmetric(1.0, y)) < 1e-6);
    }
    SUBCASE("free convolution against sampled matrices") {
        const int d = 1000;
        std::mt19937_64 rng(17);
        const int k = d / 2;
        Eigen::MatrixXd W = gaussian(k, d, rng);
        Eigen::VectorXd v(k);
        for (int i = 0; i < k; ++i) v[i] = (i % 2) ? 1.0 : -1.0;
        Eigen::MatrixXd S = W.transpose() * v.asDiagonal() * W / std::sqrt(double(k) * d);
        Eigen::MatrixXd Y = S + goe(d, rng);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Y, Eigen::EigenvaluesOnly);
        std::vector<double> ev(es.eigenvalues().data(), es.eigenvalues().data() + d);
        SpectralDensity y = symmetric_observation_density(0.5, ReadoutPrior::rademacher(), 1.0);
        CHECK(y.kolmogorov_distance(ev) < 0.02);
        CHECK(y.moment(2) == doctest::Approx(1.0 * 1.0 + 1.0).epsilon(1e-4));
    }
    SUBCASE("rectangular singular values") {
        const int d = 1200, p = d / 4, k = d / 2;
        std::mt19937_64 rng(23);
        const double x = 1.0;
        Eigen::MatrixXd U = gaussian(p, k, rng), V = gaussian(k, d, rng), N = gaussian(p, d, rng);
        Eigen::MatrixXd M = std::sqrt(x / (double(p) * k)) * U * V + N / std::sqrt(double(p));
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M * M.transpose(), Eigen::EigenvaluesOnly);
        std::vector<double> sv;
        for (int i = 0; i < p; ++i) sv.push_back(std::sqrt(std::max(0.0, es.eigenvalues()[i])));
        SpectralDensity r = rectangular_density(x, 0.25, 0.5);
        CHECK(r.mass() == doctest::Approx(1.0).epsilon(1e-6));
        CHECK(r.kolmogorov_distance(sv) < 0.03);
        SpectralDensity r0 = rectangular_density(0.0, 0.25, 0.5);
        CHECK(r0.mass() == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("denoising potentials") {
    SUBCASE("symmetric") {
        auto pot = DenoisingPotential::symmetric(0.5, ReadoutPrior::homogeneous());
        CHECK(pot->iota(0.0) == doctest::Approx(0.0));
        const auto& xs = pot->snr_grid();
        const auto& ms = pot->mmse_values();
        for (std::size_t i = 1; i < xs.size(); ++i) CHECK(ms[i] < ms[i - 1]);
        for (double x : {0.3, 1.0, 5.0}) {
            double h = 1e-2;
            double d = 4 * (pot->iota(x + h) - pot->iota(x - h)) / (2 * h);
            CHECK(d == doctest::Approx(pot->direct_mmse(x)).epsilon(1e-3));
            CHECK(pot->inverse(pot->mmse(x)) == doctest::Approx(x).epsilon(1e-6));
        }
        CHECK(std::abs(pot->inverse(1.0)) < 1e-8);
        auto iv = pot->iota_values();
        for (std::size_t i = 2; i < iv.size(); ++i) {
            CHECK(iv[i] >= iv[i - 1]);
            double s1 = (iv[i - 1] - iv[i - 2]) / (xs[i - 1] - xs[i - 2]);
            double s2 = (iv[i] - iv[i - 1]) / (xs[i] - xs[i - 1]);
            CHECK(s2 <= s1 + 1e-9);
        }
    }
    SUBCASE("rectangular") {
        auto pot = DenoisingPotential::rectangular(0.25, 0.5);
        CHECK(pot->mmse(pot->snr_grid().front()) == doctest::Approx(1.0).epsilon(5e-3));
        CHECK(pot->iota(0.0) == doctest::Approx(0.0));
        for (double x : {0.5, 2.0}) {
            double h = 1e-2;
            CHECK(2 * (pot->iota(x + h) - pot->iota(x - h)) / (2 * h) == doctest::Approx(pot->direct_mmse(x)).epsilon(1e-3));
        }
    }
}
