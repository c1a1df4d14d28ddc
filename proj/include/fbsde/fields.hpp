#pragma once

#include "fbsde/problems.hpp"

namespace fbsde {

/// Closed-form scalar field with exact derivative evaluators. Satisfies the
/// same evaluator interface as the network-backed FieldEvalT, so every loss
/// can be evaluated on an analytic field — that is what the bias laboratory
/// measures against.
struct AnalyticField {
    using scalar = double;

    std::string family; // quadratic | trig | exact:<name>
    std::function<double(double, Span)> u;
    std::function<double(double, Span)> du_dt;
    std::function<void(double, Span, Vec&)> grad;
    std::function<void(double, Span, Mat&)> hess;

    double value(double t, Span x) { return u(t, x); }
    void value_grad(double t, Span x, double& val, double* dt_out, Vec& g) {
        val = u(t, x);
        grad(t, x, g);
        if (dt_out) *dt_out = du_dt(t, x);
    }
    double dir2(double t, Span x, Span v) {
        Mat H;
        hess(t, x, H);
        double acc = 0.0;
        for (int i = 0; i < H.rows; ++i)
            for (int j = 0; j < H.cols; ++j) acc += v[static_cast<size_t>(i)] * H(i, j) * v[static_cast<size_t>(j)];
        return acc;
    }
    struct EvalStats* stats() { return nullptr; }
};

/// u = a*t + 1/2 x^T H x + b^T x + c
AnalyticField quadratic_field(double a, Mat H, Vec b, double c);

/// u = a*t + sum_j amp_j * sin(freq_j * x_j) + c; nonconstant Hessian, used
/// for remainder-rate sweeps.
AnalyticField trig_field(double a, Vec amp, Vec freq, double c);

/// The benchmark's closed-form solution as a field (BSB, BZ, PIDE).
AnalyticField exact_field(const PDEProblem& p);

} // namespace fbsde
