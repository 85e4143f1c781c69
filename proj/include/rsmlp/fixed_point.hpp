#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

namespace rsmlp {

struct FixedPointResult {
    std::vector<double> x;
    double residual = INFINITY;
    int iterations = 0;
    bool converged = false;
};

// x <- x + step (F(x) - x). The step starts at 1 - damping, shrinks when the
// sup-norm residual grows and relaxes back after steady progress.
template <class Map>
FixedPointResult damped_fixed_point(std::vector<double> x, Map map, double damping, double tol, int max_iter) {
    FixedPointResult r;
    const double base = 1.0 - damping;
    double step = base, prev = INFINITY;
    int calm = 0, it = 0;
    for (; it < max_iter; ++it) {
        std::vector<double> fx = map(x);
        double res = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) res = std::max(res, std::abs(fx[i] - x[i]));
        r.residual = res;
        if (res > prev) {
            step = std::max(1e-3, 0.6 * step);
            calm = 0;
        } else if (++calm > 20 && step < base) {
            step = std::min(base, 1.5 * step);
            calm = 0;
        }
        prev = res;
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += step * (fx[i] - x[i]);
        if (res < tol) {
            ++it;
            r.converged = true;
            break;
        }
    }
    r.x = std::move(x);
    r.iterations = it;
    return r;
}

}  // namespace rsmlp
