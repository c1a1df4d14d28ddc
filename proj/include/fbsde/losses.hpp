#pragma once

#include "fbsde/fields.hpp"
#include "fbsde/rollout.hpp"

namespace fbsde {

enum class Method { Em, MultiShotEm, Shotgun, Heun, UnEm, UnShotgun, FsPinns };

Method parse_method(const std::string& name);
const char* method_name(Method m);

enum class ErrNorm { Raw, ByDt };

/// Which objective to train and its hyperparameters. Method names in configs:
/// em, multishot_em, shotgun, heun, unem, unshotgun, fspinns.
struct LossSpec {
    Method method = Method::UnEm;
    int m = 10;                 // shots for multishot_em / shotgun
    int m1 = 5;                 // group sizes for unem / unshotgun
    int m2 = 5;
    double tau = 0.0009765625;  // fine step, 4^-5
    bool soft = false;          // soft terminal constraint
    double lambda_t = 1.0;      // weight of the terminal penalty

    void validate() const;
    /// Candidate / fine shots the rollout must carry.
    int total_shots() const;
    SchemeKind scheme(const PDEProblem& p) const;
    bool uses_fine_step() const { return method == Method::Shotgun || method == Method::UnShotgun; }
};

struct LossGrad {
    double value = 0.0;
    Vec grad;
    EvalStats stats;
};

namespace loss_detail {

inline double phi_of(const PDEProblem& p, double t, Span x, const double& y,
                     const std::vector<double>& z) {
    return p.phi(t, x, y, z);
}
inline ad::Var phi_of(const PDEProblem& p, double t, Span x, const ad::Var& y,
                      const std::vector<ad::Var>& z) {
    return p.phi_var(t, x, y, z);
}
inline double sscale_of(const PDEProblem& p, const double& y) { return p.sigma_scale(y); }
inline ad::Var sscale_of(const PDEProblem& p, const ad::Var& y) { return p.sigma_scale_var(y); }
inline double sscale_dy_of(const PDEProblem& p, const double& y) { return p.sigma_scale_dy(y); }
inline ad::Var sscale_dy_of(const PDEProblem& p, const ad::Var& y) { return p.sigma_scale_dy_var(y); }

template <class S>
S sdot_d(const std::vector<S>& a, Span w) {
    S acc = a[0] * w[0];
    for (size_t j = 1; j < w.size(); ++j) acc = acc + a[j] * w[j];
    return acc;
}

template <class S>
S shot_mean(const std::vector<S>& e, int lo, int n) {
    S acc = e[static_cast<size_t>(lo)];
    for (int i = 1; i < n; ++i) acc = acc + e[static_cast<size_t>(lo + i)];
    return acc * (1.0 / n);
}

/// Scratch shared by the per-element bodies.
template <class S>
struct ElemScratch {
    std::vector<S> z, zs, errs, w;
    Vec diag, col, corrvec, muv, gg;
    Mat dense;
    Vec xtmp;
};

/// z^T sigma(t,x,y) with the value-coupling scale included.
template <class S>
void zsig_row(const PDEProblem& p, double t, Span x, const S& y, const std::vector<S>& z,
              std::vector<S>& out, ElemScratch<S>& sc) {
    const int d = p.d;
    out.clear();
    if (p.sigma0_diagonal) {
        p.sigma0_diag(t, x, sc.diag);
        for (int j = 0; j < d; ++j)
            out.push_back(z[static_cast<size_t>(j)] * sc.diag[static_cast<size_t>(j)]);
    } else {
        p.sigma0_dense(t, x, sc.dense);
        for (int j = 0; j < d; ++j) {
            S acc = z[0] * sc.dense(0, j);
            for (int i = 1; i < d; ++i) acc = acc + z[static_cast<size_t>(i)] * sc.dense(i, j);
            out.push_back(acc);
        }
    }
    if (p.coupled) {
        const S s = sscale_of(p, y);
        for (int j = 0; j < d; ++j) out[static_cast<size_t>(j)] = out[static_cast<size_t>(j)] * s;
    }
}

/// Tr[sigma0^T (hess u) sigma0] via second directional derivatives along the
/// columns of sigma0 (the coupling scale is applied by the caller).
template <class Ev, class S = typename Ev::scalar>
S lap0(Ev& ev, const PDEProblem& p, double t, Span x, ElemScratch<S>& sc) {
    const int d = p.d;
    sc.col.assign(static_cast<size_t>(d), 0.0);
    if (ev.stats()) ++ev.stats()->laplacian_evals;
    if (p.sigma0_diagonal) {
        p.sigma0_diag(t, x, sc.diag);
        sc.col[0] = sc.diag[0];
        S acc = ev.dir2(t, x, sc.col);
        for (int j = 1; j < d; ++j) {
            sc.col[static_cast<size_t>(j - 1)] = 0.0;
            sc.col[static_cast<size_t>(j)] = sc.diag[static_cast<size_t>(j)];
            acc = acc + ev.dir2(t, x, sc.col);
        }
        return acc;
    }
    p.sigma0_dense(t, x, sc.dense);
    S acc = [&] {
        for (int i = 0; i < d; ++i) sc.col[static_cast<size_t>(i)] = sc.dense(i, 0);
        return ev.dir2(t, x, sc.col);
    }();
    for (int j = 1; j < d; ++j) {
        for (int i = 0; i < d; ++i) sc.col[static_cast<size_t>(i)] = sc.dense(i, j);
        acc = acc + ev.dir2(t, x, sc.col);
    }
    return acc;
}

/// One EM step error from precomputed base-point data.
template <class Ev, class S = typename Ev::scalar>
S em_error_from_base(Ev& ev, double t_next, Span x_next, const S& y, const S& phi,
                     const std::vector<S>& zs, double dt, Span dW) {
    return ev.value(t_next, x_next) - (y + phi * dt + sdot_d(zs, dW));
}

/// Per-element Euler-Maruyama family: m2 == 0 gives the squared shot mean
/// (EM at m1 == 1, Multi-Shot EM otherwise); m2 > 0 gives the two-group
/// product of Algorithm-1 form. Sums raw squared/product step terms over n.
template <class Ev, class S = typename Ev::scalar>
S element_em_family(Ev& ev, const PDEProblem& p, const RolloutBundle& rb, int b, int m1, int m2,
                    ElemScratch<S>& sc) {
    const int N = rb.grid.n_steps;
    const int nshots = m1 + m2;
    const bool pide = rb.spec.kind == SchemeKind::Pide;
    S total{};
    bool first = true;
    for (int n = 0; n < N; ++n) {
        const double t = rb.grid.t[static_cast<size_t>(n)];
        const double t1 = rb.grid.t[static_cast<size_t>(n) + 1];
        const double dt = rb.grid.dt[static_cast<size_t>(n)];
        const Span x = rb.main_at(b, n);
        S y{};
        ev.value_grad(t, x, y, nullptr, sc.z);
        const S phi = phi_of(p, t, x, y, sc.z);
        zsig_row(p, t, x, y, sc.z, sc.zs, sc);

        bool has_jump = false;
        S jterm{};
        if (pide) {
            const JumpRecord& jr = rb.noise.jump_at(b, n);
            const JumpSpec& js = *p.jump_spec;
            S zsum = sc.z[0];
            for (int j = 1; j < p.d; ++j) zsum = zsum + sc.z[static_cast<size_t>(j)];
            jterm = zsum * (-js.lambda * js.mu_phi * dt);
            for (int k = 0; k < jr.count; ++k) {
                sc.xtmp.assign(x.begin(), x.end());
                for (double& v : sc.xtmp) v += jr.sizes[static_cast<size_t>(k)];
                jterm = jterm + (ev.value(t, sc.xtmp) - y);
            }
            has_jump = true;
        }

        sc.errs.clear();
        for (int i = 0; i < nshots; ++i) {
            const Span xn = rb.has_candidates ? rb.cand_at(b, n + 1, i) : rb.main_at(b, n + 1);
            S e = em_error_from_base(ev, t1, xn, y, phi, sc.zs, dt, rb.noise.dw_at(b, n, i));
            if (has_jump) e = e - jterm;
            sc.errs.push_back(e);
        }
        const S contrib = m2 == 0
                              ? [&] {
                                    const S mean = shot_mean(sc.errs, 0, m1);
                                    return mean * mean;
                                }()
                              : shot_mean(sc.errs, 0, m1) * shot_mean(sc.errs, m1, m2);
        total = first ? contrib : total + contrib;
        first = false;
    }
    return total;
}

/// One Shotgun (antithetic, Brownian-increment-free) step error.
template <class Ev, class S = typename Ev::scalar>
S shotgun_error_from_base(Ev& ev, double t, double tau, Span x_plus, Span x_minus, const S& y,
                          const S& phi) {
    return (ev.value(t + tau, x_plus) + ev.value(t + tau, x_minus) - y * 2.0) * (0.5 / tau) - phi;
}

template <class Ev, class S = typename Ev::scalar>
S element_shotgun_family(Ev& ev, const PDEProblem& p, const RolloutBundle& rb, int b, int m1,
                         int m2, ElemScratch<S>& sc) {
    const int N = rb.grid.n_steps;
    const int nshots = m1 + m2;
    const double tau = rb.spec.tau;
    S total{};
    bool first = true;
    for (int n = 0; n < N; ++n) {
        const double t = rb.grid.t[static_cast<size_t>(n)];
        const Span x = rb.main_at(b, n);
        S y{};
        ev.value_grad(t, x, y, nullptr, sc.z);
        const S phi = phi_of(p, t, x, y, sc.z);
        sc.errs.clear();
        for (int i = 0; i < nshots; ++i)
            sc.errs.push_back(shotgun_error_from_base(ev, t, tau, rb.plus_at(b, n, i),
                                                      rb.minus_at(b, n, i), y, phi));
        const S contrib = m2 == 0
                              ? [&] {
                                    const S mean = shot_mean(sc.errs, 0, m1);
                                    return mean * mean;
                                }()
                              : shot_mean(sc.errs, 0, m1) * shot_mean(sc.errs, m1, m2);
        total = first ? contrib : total + contrib;
        first = false;
    }
    return total;
}

/// Backward-side quantities of one Heun point: phi with the Stratonovich
/// corrections and the z^T sigma row.
template <class Ev, class S = typename Ev::scalar>
void heun_point(Ev& ev, const PDEProblem& p, double t, Span x, S& y, S& phiH, std::vector<S>& zs,
                ElemScratch<S>& sc) {
    ev.value_grad(t, x, y, nullptr, sc.z);
    const S phi = phi_of(p, t, x, y, sc.z);
    const S c0 = lap0(ev, p, t, x, sc);
    S corr{};
    S c{};
    if (p.coupled) {
        const S s = sscale_of(p, y);
        const S sdy = sscale_dy_of(p, y);
        c = s * s * c0;
        // 1/2 s s' * || sigma0^T z ||^2
        sc.w.clear();
        if (p.sigma0_diagonal) {
            p.sigma0_diag(t, x, sc.diag);
            for (int j = 0; j < p.d; ++j)
                sc.w.push_back(sc.z[static_cast<size_t>(j)] * sc.diag[static_cast<size_t>(j)]);
        } else {
            p.sigma0_dense(t, x, sc.dense);
            for (int j = 0; j < p.d; ++j) {
                S acc = sc.z[0] * sc.dense(0, j);
                for (int i = 1; i < p.d; ++i) acc = acc + sc.z[static_cast<size_t>(i)] * sc.dense(i, j);
                sc.w.push_back(acc);
            }
        }
        S q = sc.w[0] * sc.w[0];
        for (int j = 1; j < p.d; ++j)
            q = q + sc.w[static_cast<size_t>(j)] * sc.w[static_cast<size_t>(j)];
        corr = s * sdy * q * 0.5;
    } else {
        c = c0;
        heun_drift_correction(p, t, x, nullptr, nullptr, sc.corrvec);
        corr = sdot_d(sc.z, sc.corrvec);
    }
    phiH = phi - c * 0.5 - corr;
    zsig_row(p, t, x, y, sc.z, zs, sc);
}

template <class Ev, class S = typename Ev::scalar>
S element_heun(Ev& ev, const PDEProblem& p, const RolloutBundle& rb, int b, ElemScratch<S>& sc) {
    const int N = rb.grid.n_steps;
    std::vector<S> zsA, zsB;
    S total{};
    bool first = true;
    for (int n = 0; n < N; ++n) {
        const double t = rb.grid.t[static_cast<size_t>(n)];
        const double t1 = rb.grid.t[static_cast<size_t>(n) + 1];
        const double dt = rb.grid.dt[static_cast<size_t>(n)];
        const Span dW = rb.noise.dw_at(b, n, 0);
        S yA{}, phiA{}, yB{}, phiB{};
        heun_point(ev, p, t, rb.main_at(b, n), yA, phiA, zsA, sc);
        heun_point(ev, p, t1, rb.bar_at(b, n + 1), yB, phiB, zsB, sc);
        const S dy = phiA * dt + sdot_d(zsA, dW);
        const S dyb = phiB * dt + sdot_d(zsB, dW);
        const S pred = yA + (dy + dyb) * 0.5;
        const S err = ev.value(t1, rb.main_at(b, n + 1)) - pred;
        const S contrib = err * err;
        total = first ? contrib : total + contrib;
        first = false;
    }
    return total;
}

/// PDE residual L[u] - phi at (t, x): exact time derivative, exact gradient,
/// weighted Laplacian via second directional derivatives.
template <class Ev, class S = typename Ev::scalar>
S pde_residual(Ev& ev, const PDEProblem& p, double t, Span x, ElemScratch<S>& sc) {
    S y{}, td{};
    ev.value_grad(t, x, y, &td, sc.z);
    const S phi = phi_of(p, t, x, y, sc.z);
    const S c0 = lap0(ev, p, t, x, sc);
    S res = td + c0 * 0.5 - phi;
    if (p.coupled) {
        const S s = sscale_of(p, y);
        res = td + s * s * c0 * 0.5 - phi;
    }
    if (!p.mu_is_zero) {
        p.mu(t, x, sc.muv);
        res = res + sdot_d(sc.z, sc.muv);
    }
    return res;
}

template <class Ev, class S = typename Ev::scalar>
S element_fspinns(Ev& ev, const PDEProblem& p, const RolloutBundle& rb, int b,
                  ElemScratch<S>& sc) {
    const int N = rb.grid.n_steps;
    S total{};
    bool first = true;
    for (int n = 0; n < N; ++n) {
        const S res = pde_residual(ev, p, rb.grid.t[static_cast<size_t>(n)], rb.main_at(b, n), sc);
        const S contrib = res * res;
        total = first ? contrib : total + contrib;
        first = false;
    }
    return total;
}

/// Terminal penalty of the soft-constraint formulation.
template <class Ev, class S = typename Ev::scalar>
S element_terminal(Ev& ev, const PDEProblem& p, const RolloutBundle& rb, int b,
                   ElemScratch<S>& sc) {
    const int N = rb.grid.n_steps;
    const double T = rb.grid.t[static_cast<size_t>(N)];
    const Span x = rb.main_at(b, N);
    S y{};
    ev.value_grad(T, x, y, nullptr, sc.z);
    const double gv = p.g(x);
    p.grad_g(x, sc.gg);
    const S dy = y - gv;
    S acc = dy * dy;
    for (int j = 0; j < p.d; ++j) {
        const S dz = sc.z[static_cast<size_t>(j)] - sc.gg[static_cast<size_t>(j)];
        acc = acc + dz * dz;
    }
    return acc;
}

} // namespace loss_detail

/// One-step self-consistency errors. With ErrNorm::Raw these are the raw
/// differences the training algorithms square; ErrNorm::ByDt matches the
/// dt-normalized form the bias expansions are stated for.
template <class Ev, class S = typename Ev::scalar>
S err_em(Ev& ev, const PDEProblem& p, double t, Span x, Span x_next, double dt, Span dW,
         ErrNorm norm = ErrNorm::Raw) {
    loss_detail::ElemScratch<S> sc;
    S y{};
    ev.value_grad(t, x, y, nullptr, sc.z);
    const S phi = loss_detail::phi_of(p, t, x, y, sc.z);
    loss_detail::zsig_row(p, t, x, y, sc.z, sc.zs, sc);
    S e = loss_detail::em_error_from_base(ev, t + dt, x_next, y, phi, sc.zs, dt, dW);
    if (norm == ErrNorm::ByDt) e = e * (1.0 / dt);
    return e;
}

template <class Ev, class S = typename Ev::scalar>
S err_shotgun(Ev& ev, const PDEProblem& p, double t, Span x, Span x_plus, Span x_minus,
              double tau) {
    loss_detail::ElemScratch<S> sc;
    S y{};
    ev.value_grad(t, x, y, nullptr, sc.z);
    const S phi = loss_detail::phi_of(p, t, x, y, sc.z);
    return loss_detail::shotgun_error_from_base(ev, t, tau, x_plus, x_minus, y, phi);
}

/// Heun one-step error given predictor and corrector states built with the
/// same increment.
template <class Ev, class S = typename Ev::scalar>
S err_heun(Ev& ev, const PDEProblem& p, double t, Span x, Span x_bar, Span x_next, double dt,
           Span dW, ErrNorm norm = ErrNorm::Raw) {
    loss_detail::ElemScratch<S> sc;
    std::vector<S> zsA, zsB;
    S yA{}, phiA{}, yB{}, phiB{};
    loss_detail::heun_point(ev, p, t, x, yA, phiA, zsA, sc);
    loss_detail::heun_point(ev, p, t + dt, x_bar, yB, phiB, zsB, sc);
    const S dy = phiA * dt + loss_detail::sdot_d(zsA, dW);
    const S dyb = phiB * dt + loss_detail::sdot_d(zsB, dW);
    S e = ev.value(t + dt, x_next) - (yA + (dy + dyb) * 0.5);
    if (norm == ErrNorm::ByDt) e = e * (1.0 / dt);
    return e;
}

double shot_average(Span errors);

/// Per-sample step errors and the two group means, for EM-family bundles.
struct StepErrors {
    int B = 0, N = 0, M = 0;
    Vec err;            // [b][n][i]
    Vec group1, group2; // [b][n]
    double at(int b, int n, int i) const { return err[(static_cast<size_t>(b) * N + n) * M + i]; }
    double g1(int b, int n) const { return group1[static_cast<size_t>(b) * N + n]; }
    double g2(int b, int n) const { return group2[static_cast<size_t>(b) * N + n]; }
};

StepErrors compute_step_errors(const Surrogate& s, const PDEProblem& p, const RolloutBundle& rb,
                               int m1, int m2, Exec exec = Exec::Parallel);

double loss_em(const Surrogate& s, const PDEProblem& p, const RolloutBundle& rb,
               Exec exec = Exec::Parallel);
double loss_multishot_em(const Surrogate& s, const PDEProblem& p, const RolloutBundle& rb, int m,
                         Exec exec = Exec::Parallel);
double loss_shotgun(const Surrogate& s, const PDEProblem& p, const RolloutBundle& rb, int m,
                    double tau, Exec exec = Exec::Parallel);
double loss_heun(const Surrogate& s, const PDEProblem& p, const RolloutBundle& rb,
                 Exec exec = Exec::Parallel, EvalStats* stats = nullptr);
double loss_unem(const Surrogate& s, const PDEProblem& p, const RolloutBundle& rb, int m1, int m2,
                 Exec exec = Exec::Parallel);
double loss_unshotgun(const Surrogate& s, const PDEProblem& p, const RolloutBundle& rb, int m1,
                      int m2, double tau, Exec exec = Exec::Parallel);
double loss_fs_pinns(const Surrogate& s, const PDEProblem& p, const RolloutBundle& rb,
                     Exec exec = Exec::Parallel);
double loss_terminal(const Surrogate& s, const PDEProblem& p, const RolloutBundle& rb,
                     Exec exec = Exec::Parallel);

/// Method loss plus lambda_t * terminal penalty when soft-constrained.
double total_loss(const LossSpec& spec, const Surrogate& s, const PDEProblem& p,
                  const RolloutBundle& rb, Exec exec = Exec::Parallel);

/// Loss and exact parameter gradient, with gradient flowing through both the
/// network targets and predictions (no stop-gradient anywhere).
LossGrad total_loss_gradient(const LossSpec& spec, const Surrogate& s, const PDEProblem& p,
                             const RolloutBundle& rb, Exec exec = Exec::Parallel);

/// Analytic-field loss values over a bundle (the field plays the surrogate).
double loss_value_analytic(const LossSpec& spec, AnalyticField& field, const PDEProblem& p,
                           const RolloutBundle& rb, Exec exec = Exec::Parallel);

} // namespace fbsde
