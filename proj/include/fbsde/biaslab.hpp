#pragma once

#include "fbsde/losses.hpp"

namespace fbsde::biaslab {

enum class Kind { Em, MultiShotEm, Shotgun, Heun, UnEm, UnShotgun };

const char* kind_name(Kind k);

struct MParams {
    int m = 1;  // multishot / shotgun shots
    int m1 = 1; // unbiased group sizes
    int m2 = 1;
};

/// A fixed evaluation point: a synthetic constant-coefficient problem
/// (mu = 0, sigma = scale * I, phi = const) together with an analytic field.
/// Everything the one-step estimators need lives here.
struct Setup {
    PDEProblem problem;
    AnalyticField field;
    double t = 0.3;
    Vec x;
    double residual = 0.0; // (L[u] - phi)(t, x), by construction
};

/// Quadratic field 0.5 x^T H x + a t with a chosen so the PDE residual at the
/// setup point equals `residual` exactly.
Setup quadratic_setup(double residual, const Mat& H, double sigma_scale = 1.0);

/// Trigonometric field with nonconstant Hessian for remainder-rate sweeps.
Setup trig_setup(double residual, int d, double sigma_scale = 1.0);

/// Residual^2 plus the kind-specific leading bias term: 1/2 Tr[(sigma^T H
/// sigma)^2] for EM, that over M for Shotgun / Multi-Shot, zero for Heun and
/// the unbiased constructions. Excludes the vanishing remainder.
double predicted_loss(Kind kind, const Setup& setup, const MParams& mp);

/// Exact residual and weighted-Hessian traces of the setup at its point.
double setup_residual(const Setup& setup);
double setup_tr_hw2(const Setup& setup);

/// MC mean and standard error of the dt-normalized one-step loss with fresh
/// i.i.d. noise per sample; deterministic per seed.
McEstimate mc_loss_estimate(Kind kind, const Setup& setup, double dt_or_tau, const MParams& mp,
                            long n_samples, uint64_t seed, Exec exec = Exec::Parallel);

struct BiasReport {
    std::string kind;
    double dt = 0.0;
    MParams m;
    long n_samples = 0;
    double mc_mean = 0.0;
    double mc_stderr = 0.0;
    double predicted = 0.0;
    double slack = 0.0; // max(3 stderr, C sqrt(dt)) with C documented per kind
    bool pass = false;
};

BiasReport bias_check(Kind kind, const Setup& setup, double dt_or_tau, const MParams& mp,
                      long n_samples, uint64_t seed, Exec exec = Exec::Parallel);

struct SweepResult {
    std::vector<BiasReport> reports;
    double slope = 0.0;
    double slope_lo = 0.0; // accepted band
    double slope_hi = 0.0;
    bool pass = false;
};

/// log(bias) vs log(M) for the shot-averaged losses; slope -1 expected.
SweepResult bias_scaling_sweep(Kind kind, const Setup& setup, const std::vector<int>& m_list,
                               double dt_or_tau, long n_samples, uint64_t seed,
                               Exec exec = Exec::Parallel);

/// log|mc - predicted| vs log(dt): remainder decay rate. EM-family accepts a
/// slope in [0.5, 1.1] (sampled vs exact-expectation regime), Shotgun in
/// [0.8, 1.2].
SweepResult remainder_rate_sweep(Kind kind, const Setup& setup, const std::vector<double>& dts,
                                 const MParams& mp, long n_samples, uint64_t seed,
                                 Exec exec = Exec::Parallel);

struct MomentReport {
    int k = 0;
    double empirical = 0.0;
    double analytic = 0.0;
    double std_error = 0.0;
    bool pass = false;
};

/// Moments k = 1..4 of X = xi^T H xi - Tr[H], xi standard normal, against
/// 0, 2 Tr[H^2], 8 Tr[H^3], 48 Tr[H^4] + 12 Tr[H^2]^2.
std::vector<MomentReport> moment_check(const Mat& H, long n_samples, uint64_t seed,
                                       Exec exec = Exec::Parallel);

struct VarCondition {
    double alpha = 0.0;
    double beta = 0.0;
    double threshold = 0.0; // 4 / (3M + beta M^4)
    bool admissible = false;
};

VarCondition variance_condition(int m, int m1, int m2);

struct VarianceReport {
    VarCondition cond;
    long n_outer = 0;
    // sample variances of the per-step estimators and standard errors of
    // those variance estimates
    double v_uem = 0, v_sg = 0, v_sem = 0, v_em = 0;
    double se_uem = 0, se_sg = 0, se_sem = 0, se_em = 0;
};

/// Empirical variances of the four per-step estimators at the setup point.
/// Inadmissible triples are reported, not refused.
VarianceReport variance_ordering_estimate(const Setup& setup, const MParams& mp, double dt,
                                          double tau, long n_outer, uint64_t seed,
                                          Exec exec = Exec::Parallel);

} // namespace fbsde::biaslab
