#pragma once

#include <map>
#include <optional>
#include <string>

#include "fbsde/ad.hpp"
#include "fbsde/common.hpp"

namespace fbsde {

/// Jump component of the PIDE benchmark: scalar jumps with Poisson arrivals,
/// applied additively to every coordinate.
struct JumpSpec {
    double lambda = 0.0;    // arrivals per unit time
    double mu_phi = 0.0;    // jump size mean
    double sigma_phi = 0.0; // jump size std deviation
    double tau_diff = 0.0;  // diffusion scale of the PIDE
    double epsilon = 0.0;   // drift scale of the PIDE
};

/// Terminal-value problem
///   L[u] = du/dt + mu . grad u + 1/2 Tr[sigma^T (hess u) sigma] = phi(t,x,u,grad u),
///   u(t_end, .) = g,
/// together with everything the solvers need: coefficient callbacks in both
/// plain-double and tape form, analytic terminal derivatives, the diffusion
/// Jacobian for Heun corrections, and the closed-form solution when one
/// exists.
///
/// The diffusion factors as sigma(t,x,y) = sigma_scale(y) * sigma0(t,x); the
/// fully-coupled BZ problem has sigma_scale(y) = alpha*y and sigma0 = I,
/// every other benchmark has sigma_scale = 1. Problems are immutable after
/// construction and safe to share across threads.
struct PDEProblem {
    std::string name;
    int d = 0;
    double t_end = 0.0;
    Vec x0;
    std::map<std::string, double> params; // resolved parameter set

    std::function<void(double, Span, Vec&)> mu;
    bool mu_is_zero = true;

    bool sigma0_diagonal = true;
    std::function<void(double, Span, Vec&)> sigma0_diag;  // diagonal entries
    std::function<void(double, Span, Mat&)> sigma0_dense; // always available

    bool coupled = false; // sigma needs the current surrogate value
    std::function<double(double)> sigma_scale = [](double) { return 1.0; };
    std::function<double(double)> sigma_scale_dy = [](double) { return 0.0; };
    std::function<ad::Var(const ad::Var&)> sigma_scale_var;
    std::function<ad::Var(const ad::Var&)> sigma_scale_dy_var;

    std::function<double(double, Span, const double&, const std::vector<double>&)> phi;
    std::function<ad::Var(double, Span, const ad::Var&, const std::vector<ad::Var>&)> phi_var;

    std::function<double(Span)> g;
    std::function<void(Span, Vec&)> grad_g;
    std::function<double(Span, Span)> g_dir2; // v^T (hess g) v

    /// d matrices d(sigma)/dx_l. y/z carry the surrogate value and spatial
    /// gradient at the evaluation point; only the value-coupled BZ Jacobian
    /// reads them.
    bool has_sigma_jacobian = false;
    std::function<void(double, Span, const double*, const Vec*, std::vector<Mat>&)> sigma_jacobian;

    bool has_exact = false;
    std::function<double(double, Span)> exact;
    std::optional<double> reference_u0;
    std::optional<JumpSpec> jump_spec;

    double sigma_scale_value(std::optional<double> y) const {
        if (!coupled) return 1.0;
        if (!y) throw std::invalid_argument(name + ": diffusion requires the current surrogate value");
        return sigma_scale(*y);
    }
    void sigma_diag(double t, Span x, std::optional<double> y, Vec& out) const {
        if (!sigma0_diagonal) throw std::logic_error(name + ": sigma is not diagonal");
        sigma0_diag(t, x, out);
        const double s = sigma_scale_value(y);
        if (s != 1.0)
            for (double& v : out) v *= s;
    }
    Mat sigma(double t, Span x, std::optional<double> y = {}) const {
        Mat m;
        sigma0_dense(t, x, m);
        const double s = sigma_scale_value(y);
        if (s != 1.0)
            for (double& v : m.a) v *= s;
        return m;
    }
};

/// Benchmark catalog. Names: HJB, BSB, AC, BZ, PIDE.
PDEProblem make_problem(const std::string& name, std::optional<int> d_override = {},
                        const std::map<std::string, double>& param_overrides = {});

const std::vector<std::string>& problem_names();

/// Closed-form solution; throws when the benchmark has none (HJB, AC).
double exact_solution(const PDEProblem& p, double t, Span x);

struct McEstimate {
    double mean = 0.0;
    double std_error = 0.0;
};

/// Monte Carlo estimate of the HJB log-expectation formula
///   u(t,x) = -ln E[exp(-g(x + sqrt(2) W_{T-t}))]
/// with the delta-method standard error of the outer log. Deterministic for a
/// fixed seed regardless of execution policy.
McEstimate hjb_reference_mc(const PDEProblem& p, Span x, double t, long n_samples,
                            uint64_t seed, Exec exec = Exec::Parallel);

/// Drift correction entering the Heun scheme:
///   mu_heun = mu - corr,  corr_j = 1/2 sum_{l,k} (d sigma/dx_l)_{jk} sigma_{lk}.
/// y/z as in sigma_jacobian.
void heun_drift_correction(const PDEProblem& p, double t, Span x, const double* y,
                           const Vec* z, Vec& out);

} // namespace fbsde
