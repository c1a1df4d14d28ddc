#include "fbsde/fields.hpp"

#include <cmath>

namespace fbsde {

AnalyticField quadratic_field(double a, Mat H, Vec b, double c) {
    if (H.rows != H.cols || static_cast<size_t>(H.rows) != b.size())
        throw std::invalid_argument("quadratic_field: H must be square and match b");
    AnalyticField f;
    f.family = "quadratic";
    f.u = [a, H, b, c](double t, Span x) {
        double q = 0.0;
        for (int i = 0; i < H.rows; ++i)
            for (int j = 0; j < H.cols; ++j) q += x[static_cast<size_t>(i)] * H(i, j) * x[static_cast<size_t>(j)];
        return a * t + 0.5 * q + dot(b, x) + c;
    };
    f.du_dt = [a](double, Span) { return a; };
    f.grad = [H, b](double, Span x, Vec& g) {
        g.assign(b.begin(), b.end());
        for (int i = 0; i < H.rows; ++i)
            for (int j = 0; j < H.cols; ++j) g[static_cast<size_t>(i)] += H(i, j) * x[static_cast<size_t>(j)];
    };
    f.hess = [H](double, Span, Mat& out) { out = H; };
    return f;
}

AnalyticField trig_field(double a, Vec amp, Vec freq, double c) {
    if (amp.size() != freq.size()) throw std::invalid_argument("trig_field: size mismatch");
    AnalyticField f;
    f.family = "trig";
    f.u = [a, amp, freq, c](double t, Span x) {
        double s = a * t + c;
        for (size_t j = 0; j < amp.size(); ++j) s += amp[j] * std::sin(freq[j] * x[j]);
        return s;
    };
    f.du_dt = [a](double, Span) { return a; };
    f.grad = [amp, freq](double, Span x, Vec& g) {
        g.resize(amp.size());
        for (size_t j = 0; j < amp.size(); ++j) g[j] = amp[j] * freq[j] * std::cos(freq[j] * x[j]);
    };
    f.hess = [amp, freq](double, Span x, Mat& out) {
        const int d = static_cast<int>(amp.size());
        out = Mat(d, d);
        for (int j = 0; j < d; ++j) {
            const size_t k = static_cast<size_t>(j);
            out(j, j) = -amp[k] * freq[k] * freq[k] * std::sin(freq[k] * x[k]);
        }
    };
    return f;
}

AnalyticField exact_field(const PDEProblem& p) {
    AnalyticField f;
    f.family = "exact:" + p.name;
    if (p.name == "BSB") {
        const double r = p.params.at("r");
        const double alpha = p.params.at("alpha");
        const double T = p.t_end;
        const double k = r + alpha * alpha;
        f.u = [k, T](double t, Span x) { return std::exp(k * (T - t)) * norm2sq(x); };
        f.du_dt = [k, T](double t, Span x) { return -k * std::exp(k * (T - t)) * norm2sq(x); };
        f.grad = [k, T](double t, Span x, Vec& g) {
            const double e = std::exp(k * (T - t));
            g.resize(x.size());
            for (size_t j = 0; j < x.size(); ++j) g[j] = 2.0 * e * x[j];
        };
        f.hess = [k, T](double t, Span x, Mat& out) {
            out = Mat::identity(static_cast<int>(x.size()), 2.0 * std::exp(k * (T - t)));
        };
        return f;
    }
    if (p.name == "BZ") {
        const double r = p.params.at("r");
        const double D = p.params.at("D");
        const double T = p.t_end;
        f.u = [r, D, T](double t, Span x) {
            double s = 0.0;
            for (double xj : x) s += std::sin(xj);
            return std::exp(-r * (T - t)) * D * s;
        };
        f.du_dt = [r, D, T](double t, Span x) {
            double s = 0.0;
            for (double xj : x) s += std::sin(xj);
            return r * std::exp(-r * (T - t)) * D * s;
        };
        f.grad = [r, D, T](double t, Span x, Vec& g) {
            const double e = std::exp(-r * (T - t)) * D;
            g.resize(x.size());
            for (size_t j = 0; j < x.size(); ++j) g[j] = e * std::cos(x[j]);
        };
        f.hess = [r, D, T](double t, Span x, Mat& out) {
            const double e = std::exp(-r * (T - t)) * D;
            const int d = static_cast<int>(x.size());
            out = Mat(d, d);
            for (int j = 0; j < d; ++j) out(j, j) = -e * std::sin(x[static_cast<size_t>(j)]);
        };
        return f;
    }
    if (p.name == "PIDE") {
        const double d = static_cast<double>(p.d);
        f.u = [d](double, Span x) { return norm2sq(x) / d; };
        f.du_dt = [](double, Span) { return 0.0; };
        f.grad = [d](double, Span x, Vec& g) {
            g.resize(x.size());
            for (size_t j = 0; j < x.size(); ++j) g[j] = 2.0 * x[j] / d;
        };
        f.hess = [d](double, Span x, Mat& out) {
            out = Mat::identity(static_cast<int>(x.size()), 2.0 / d);
        };
        return f;
    }
    throw std::invalid_argument(p.name + " has no closed-form solution field");
}

} // namespace fbsde
