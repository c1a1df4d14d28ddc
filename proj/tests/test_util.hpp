#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "fbsde/common.hpp"

namespace testutil {

inline double central_diff(const std::function<double(double)>& f, double x0, double h) {
    return (f(x0 + h) - f(x0 - h)) / (2.0 * h);
}

inline double second_central_diff(const std::function<double(double)>& f, double x0, double h) {
    return (f(x0 + h) - 2.0 * f(x0) + f(x0 - h)) / (h * h);
}

inline double rel_err(double got, double want, double floor = 1e-9) {
    return std::abs(got - want) / std::max(std::abs(want), floor);
}

inline fbsde::Vec random_vec(std::mt19937_64& rng, size_t n, double lo = -1.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    fbsde::Vec v(n);
    for (double& x : v) x = u(rng);
    return v;
}

inline fbsde::Mat random_symmetric(std::mt19937_64& rng, int n, double scale = 1.0) {
    std::uniform_real_distribution<double> u(-scale, scale);
    fbsde::Mat m(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            const double v = u(rng);
            m(i, j) = v;
            m(j, i) = v;
        }
    return m;
}

} // namespace testutil
