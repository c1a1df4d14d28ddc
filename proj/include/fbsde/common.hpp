#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fbsde {

using Vec = std::vector<double>;
using Span = std::span<const double>;

/// Dense row-major matrix, small enough to pass by value at benchmark sizes.
struct Mat {
    int rows = 0;
    int cols = 0;
    Vec a;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

    double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

    static Mat identity(int n, double scale = 1.0) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = scale;
        return m;
    }
    static Mat diag(const Vec& d) {
        Mat m(static_cast<int>(d.size()), static_cast<int>(d.size()));
        for (size_t i = 0; i < d.size(); ++i) m(static_cast<int>(i), static_cast<int>(i)) = d[i];
        return m;
    }

    /// out = M * v
    void matvec(std::span<const double> v, Vec& out) const {
        out.assign(rows, 0.0);
        for (int i = 0; i < rows; ++i) {
            double s = 0.0;
            const double* row = a.data() + static_cast<size_t>(i) * cols;
            for (int j = 0; j < cols; ++j) s += row[j] * v[j];
            out[i] = s;
        }
    }
    /// out = M^T * v
    void matvec_t(std::span<const double> v, Vec& out) const {
        out.assign(cols, 0.0);
        for (int i = 0; i < rows; ++i) {
            const double* row = a.data() + static_cast<size_t>(i) * cols;
            for (int j = 0; j < cols; ++j) out[j] += row[j] * v[i];
        }
    }
};

inline Mat matmul(const Mat& x, const Mat& y) {
    if (x.cols != y.rows) throw std::invalid_argument("matmul: shape mismatch");
    Mat out(x.rows, y.cols);
    for (int i = 0; i < x.rows; ++i)
        for (int k = 0; k < x.cols; ++k) {
            const double xik = x(i, k);
            if (xik == 0.0) continue;
            for (int j = 0; j < y.cols; ++j) out(i, j) += xik * y(k, j);
        }
    return out;
}

inline double trace(const Mat& m) {
    double s = 0.0;
    for (int i = 0; i < std::min(m.rows, m.cols); ++i) s += m(i, i);
    return s;
}

inline double dot(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline double norm2sq(std::span<const double> x) { return dot(x, x); }

inline bool all_finite(std::span<const double> x) {
    for (double v : x)
        if (!std::isfinite(v)) return false;
    return true;
}

/// Execution policy for the data-parallel kernels. Serial is the reference
/// path; Parallel runs the same per-index work under OpenMP. Both produce
/// bit-identical results because reductions happen in index order.
enum class Exec { Serial, Parallel };

void parallel_for(Exec policy, int n, const std::function<void(int)>& body);

int hardware_threads();

} // namespace fbsde
