#include "rsmlp/quadrature.hpp"

#include <gsl/gsl_integration.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <stdexcept>

namespace rsmlp {

namespace {

std::mutex cache_mutex;

Rule make_hermite(int n) {
    gsl_integration_fixed_workspace* ws =
        gsl_integration_fixed_alloc(gsl_integration_fixed_hermite, n, 0.0, 1.0, 0.0, 0.0);
    if (!ws) throw std::runtime_error("gauss_hermite: allocation failed");
    Rule r;
    const double* x = gsl_integration_fixed_nodes(ws);
    const double* w = gsl_integration_fixed_weights(ws);
    const double s2 = std::sqrt(2.0), spi = std::sqrt(M_PI);
    for (int i = 0; i < n; ++i) {
        r.x.push_back(x[i] * s2);
        r.w.push_back(w[i] / spi);
    }
    gsl_integration_fixed_free(ws);
    return r;
}

Rule make_legendre(int n) {
    gsl_integration_glfixed_table* t = gsl_integration_glfixed_table_alloc(n);
    Rule r;
    for (int i = 0; i < n; ++i) {
        double xi, wi;
        gsl_integration_glfixed_point(-1.0, 1.0, i, &xi, &wi, t);
        r.x.push_back(xi);
        r.w.push_back(wi);
    }
    gsl_integration_glfixed_table_free(t);
    return r;
}

}  // namespace

const Rule& gauss_hermite(int n) {
    static std::map<int, Rule> cache;
    std::lock_guard<std::mutex> lock(cache_mutex);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, make_hermite(n)).first;
    return it->second;
}

const Rule& gauss_legendre(int n) {
    static std::map<int, Rule> cache;
    std::lock_guard<std::mutex> lock(cache_mutex);
    auto it = cache.find(n);
    if (it == cache.end()) it = cache.emplace(n, make_legendre(n)).first;
    return it->second;
}

Rule gaussian_panels(const std::vector<double>& breaks, double L, double max_width, int order) {
    std::vector<double> pts{-L, L};
    for (double b : breaks)
        if (b > -L && b < L) pts.push_back(b);
    std::sort(pts.begin(), pts.end());
    const Rule& gl = gauss_legendre(order);
    const double c = 1.0 / std::sqrt(2.0 * M_PI);
    Rule r;
    for (std::size_t p = 0; p + 1 < pts.size(); ++p) {
        double a = pts[p], b = pts[p + 1];
        if (b - a <= 0) continue;
        int m = std::max(1, (int)std::ceil((b - a) / max_width));
        double h = (b - a) / m;
        for (int j = 0; j < m; ++j) {
            double lo = a + j * h, mid = lo + 0.5 * h;
            for (std::size_t i = 0; i < gl.size(); ++i) {
                double z = mid + 0.5 * h * gl.x[i];
                r.x.push_back(z);
                r.w.push_back(0.5 * h * gl.w[i] * c * std::exp(-0.5 * z * z));
            }
        }
    }
    return r;
}

double gaussian_mean(const std::function<double(double)>& f, const std::vector<double>& kinks,
                     int panel_order) {
    Rule r = gaussian_panels(kinks, 13.0, 2.0, panel_order);
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += r.w[i] * f(r.x[i]);
    return s;
}

}  // namespace rsmlp
