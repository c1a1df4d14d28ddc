#include "fbsde/rollout.hpp"

namespace fbsde {

namespace {

/// sigma(t,x,y) applied to a vector, diagonal fast path included.
struct SigmaApply {
    const PDEProblem& p;
    Vec diag;
    Mat dense;

    void prepare(double t, Span x) {
        if (p.sigma0_diagonal)
            p.sigma0_diag(t, x, diag);
        else
            p.sigma0_dense(t, x, dense);
    }
    // out += scale(y) * sigma0 * v
    void accumulate(std::optional<double> y, std::span<const double> v, Vec& out) const {
        const double s = p.sigma_scale_value(y);
        if (p.sigma0_diagonal) {
            for (size_t j = 0; j < out.size(); ++j) out[j] += s * diag[j] * v[j];
        } else {
            for (int i = 0; i < dense.rows; ++i) {
                double acc = 0.0;
                for (int j = 0; j < dense.cols; ++j) acc += dense(i, j) * v[j];
                out[static_cast<size_t>(i)] += s * acc;
            }
        }
    }
};

} // namespace

void em_forward_step(const PDEProblem& p, double t, Span x, double dt, Span dW,
                     std::optional<double> y_opt, Vec& out) {
    if (dt <= 0.0) throw std::invalid_argument("em_forward_step: dt must be positive");
    out.assign(x.begin(), x.end());
    if (!p.mu_is_zero) {
        Vec mu;
        p.mu(t, x, mu);
        for (size_t j = 0; j < out.size(); ++j) out[j] += dt * mu[j];
    }
    SigmaApply sa{p, {}, {}};
    sa.prepare(t, x);
    sa.accumulate(y_opt, dW, out);
}

void heun_forward_step(const PDEProblem& p, double t, Span x, double dt, Span dW,
                       const YzEval* yz, Vec& x_bar, Vec& x_next) {
    const size_t d = x.size();
    double y0 = 0.0;
    Vec z0;
    const double* y_ptr = nullptr;
    const Vec* z_ptr = nullptr;
    if (p.coupled) {
        if (yz == nullptr || !*yz)
            throw std::invalid_argument(p.name + ": coupled Heun step needs a surrogate evaluator");
        (*yz)(t, x, y0, z0);
        y_ptr = &y0;
        z_ptr = &z0;
    }

    Vec corr;
    heun_drift_correction(p, t, x, y_ptr, z_ptr, corr);
    Vec dx(d, 0.0);
    if (!p.mu_is_zero) {
        Vec mu;
        p.mu(t, x, mu);
        for (size_t j = 0; j < d; ++j) dx[j] += dt * mu[j];
    }
    for (size_t j = 0; j < d; ++j) dx[j] -= dt * corr[j];
    SigmaApply sa{p, {}, {}};
    sa.prepare(t, x);
    sa.accumulate(y_ptr ? std::optional<double>(*y_ptr) : std::nullopt, dW, dx);
    x_bar.resize(d);
    for (size_t j = 0; j < d; ++j) x_bar[j] = x[j] + dx[j];

    const double t1 = t + dt;
    double y1 = 0.0;
    Vec z1;
    const double* y1_ptr = nullptr;
    const Vec* z1_ptr = nullptr;
    if (p.coupled) {
        (*yz)(t1, x_bar, y1, z1);
        y1_ptr = &y1;
        z1_ptr = &z1;
    }
    Vec corr1;
    heun_drift_correction(p, t1, x_bar, y1_ptr, z1_ptr, corr1);
    Vec dx_bar(d, 0.0);
    if (!p.mu_is_zero) {
        Vec mu;
        p.mu(t1, x_bar, mu);
        for (size_t j = 0; j < d; ++j) dx_bar[j] += dt * mu[j];
    }
    for (size_t j = 0; j < d; ++j) dx_bar[j] -= dt * corr1[j];
    sa.prepare(t1, x_bar);
    sa.accumulate(y1_ptr ? std::optional<double>(*y1_ptr) : std::nullopt, dW, dx_bar);

    x_next.resize(d);
    for (size_t j = 0; j < d; ++j) x_next[j] = x[j] + 0.5 * (dx[j] + dx_bar[j]);
}

void jump_forward_step(const PDEProblem& p, double t, Span x, double dt, Span dW,
                       const JumpRecord& jumps, Vec& out) {
    if (!p.jump_spec) throw std::invalid_argument(p.name + ": jump step needs a jump_spec");
    em_forward_step(p, t, x, dt, dW, std::nullopt, out);
    const JumpSpec& js = *p.jump_spec;
    double shift = -js.lambda * js.mu_phi * dt;
    for (double z : jumps.sizes) shift += z;
    if (shift != 0.0)
        for (double& v : out) v += shift;
}

RolloutBundle rollout(const PDEProblem& p, const TimeGrid& grid, const RolloutSpec& spec, int B,
                      const Surrogate* surrogate, uint64_t seed, Exec exec) {
    if (B < 1) throw std::invalid_argument("rollout: batch size must be >= 1");
    if (spec.m_total < 1) throw std::invalid_argument("rollout: m_total must be >= 1");
    if (p.coupled && surrogate == nullptr)
        throw std::invalid_argument(p.name + " is fully coupled; rollout needs the surrogate");
    if (spec.kind == SchemeKind::Heun && !p.has_sigma_jacobian)
        throw std::invalid_argument(p.name + ": Heun rollout needs sigma_jacobian");
    if (spec.kind == SchemeKind::Pide && !p.jump_spec)
        throw std::invalid_argument(p.name + ": PIDE rollout needs a jump_spec");
    if (p.jump_spec && spec.kind != SchemeKind::Pide)
        throw std::invalid_argument(p.name + " has jumps; use the PIDE rollout scheme");
    if (spec.kind == SchemeKind::Shotgun && spec.tau <= 0.0)
        throw std::invalid_argument("rollout: Shotgun needs tau > 0");

    const int N = grid.n_steps;
    const int d = p.d;
    const int M = spec.m_total;

    RolloutBundle rb;
    rb.grid = grid;
    rb.B = B;
    rb.d = d;
    rb.spec = spec;
    rb.noise = sample_noise({B, N, M, d}, grid,
                            spec.kind == SchemeKind::Shotgun ? std::optional<double>(spec.tau)
                                                             : std::nullopt,
                            spec.kind == SchemeKind::Pide ? p.jump_spec : std::nullopt, seed, exec);
    rb.x_main.assign(static_cast<size_t>(B) * (N + 1) * d, 0.0);
    if (spec.kind == SchemeKind::MultiShot || spec.kind == SchemeKind::Pide) {
        rb.has_candidates = true;
        rb.x_candidates.assign(static_cast<size_t>(B) * (N + 1) * M * d, 0.0);
    }
    if (spec.kind == SchemeKind::Shotgun) {
        rb.has_antithetic = true;
        rb.x_plus.assign(static_cast<size_t>(B) * N * M * d, 0.0);
        rb.x_minus.assign(static_cast<size_t>(B) * N * M * d, 0.0);
    }
    if (spec.kind == SchemeKind::Heun) {
        rb.has_bar = true;
        rb.x_heun_bar.assign(static_cast<size_t>(B) * (N + 1) * d, 0.0);
    }

    parallel_for(exec, B, [&](int b) {
        Vec x = p.x0;
        Vec xn, xbar, mu, work;
        auto write_main = [&](int n, const Vec& v) {
            double* dst = rb.x_main.data() + (static_cast<size_t>(b) * (N + 1) + n) * d;
            for (int k = 0; k < d; ++k) dst[k] = v[static_cast<size_t>(k)];
        };
        auto write_cand = [&](int n, int i, const Vec& v) {
            double* dst = rb.x_candidates.data() +
                          ((static_cast<size_t>(b) * (N + 1) + n) * M + i) * d;
            for (int k = 0; k < d; ++k) dst[k] = v[static_cast<size_t>(k)];
        };
        write_main(0, x);
        if (rb.has_candidates)
            for (int i = 0; i < M; ++i) write_cand(0, i, x);

        // coupled problems evaluate the surrogate once per step at the main
        // state and reuse the value in every candidate-shot diffusion
        std::optional<YzEval> yz;
        if (p.coupled && surrogate != nullptr) {
            yz = [surrogate](double t, Span xx, double& y, Vec& z) {
                with_field_eval(*surrogate, nullptr, [&](auto& ev) {
                    ev.value_grad(t, xx, y, nullptr, z);
                    return 0;
                });
            };
        }
        auto main_value = [&](double t, Span xx) -> std::optional<double> {
            if (!p.coupled) return std::nullopt;
            return with_field_eval(*surrogate, nullptr,
                                   [&](auto& ev) { return ev.value(t, xx); });
        };

        for (int n = 0; n < N; ++n) {
            const double t = grid.t[static_cast<size_t>(n)];
            const double dt = grid.dt[static_cast<size_t>(n)];
            switch (spec.kind) {
            case SchemeKind::EM: {
                em_forward_step(p, t, x, dt, rb.noise.dw_at(b, n, 0), main_value(t, x), xn);
                x = xn;
                break;
            }
            case SchemeKind::MultiShot: {
                const auto y = main_value(t, x);
                for (int i = 0; i < M; ++i) {
                    em_forward_step(p, t, x, dt, rb.noise.dw_at(b, n, i), y, xn);
                    write_cand(n + 1, i, xn);
                }
                const double* c0 = rb.x_candidates.data() +
                                   (static_cast<size_t>(b) * (N + 1) + n + 1) * M * d;
                x.assign(c0, c0 + d);
                break;
            }
            case SchemeKind::Pide: {
                const JumpRecord& jr = rb.noise.jump_at(b, n);
                const JumpSpec& js = *p.jump_spec;
                double shift = -js.lambda * js.mu_phi * dt;
                for (double zz : jr.sizes) shift += zz;
                for (int i = 0; i < M; ++i) {
                    em_forward_step(p, t, x, dt, rb.noise.dw_at(b, n, i), std::nullopt, xn);
                    for (double& v : xn) v += shift;
                    write_cand(n + 1, i, xn);
                }
                const double* c0 = rb.x_candidates.data() +
                                   (static_cast<size_t>(b) * (N + 1) + n + 1) * M * d;
                x.assign(c0, c0 + d);
                break;
            }
            case SchemeKind::Shotgun: {
                const auto y = main_value(t, x);
                SigmaApply sa{p, {}, {}};
                sa.prepare(t, x);
                Vec base(x.begin(), x.end());
                if (!p.mu_is_zero) {
                    p.mu(t, x, mu);
                    for (int k = 0; k < d; ++k) base[static_cast<size_t>(k)] += spec.tau * mu[static_cast<size_t>(k)];
                }
                work.resize(static_cast<size_t>(d));
                for (int i = 0; i < M; ++i) {
                    work.assign(static_cast<size_t>(d), 0.0);
                    sa.accumulate(y, rb.noise.fine_at(b, n, i), work);
                    double* dp = rb.x_plus.data() + ((static_cast<size_t>(b) * N + n) * M + i) * d;
                    double* dm = rb.x_minus.data() + ((static_cast<size_t>(b) * N + n) * M + i) * d;
                    for (int k = 0; k < d; ++k) {
                        dp[k] = base[static_cast<size_t>(k)] + work[static_cast<size_t>(k)];
                        dm[k] = base[static_cast<size_t>(k)] - work[static_cast<size_t>(k)];
                    }
                }
                em_forward_step(p, t, x, dt, rb.noise.dw_at(b, n, 0), y, xn);
                x = xn;
                break;
            }
            case SchemeKind::Heun: {
                heun_forward_step(p, t, x, dt, rb.noise.dw_at(b, n, 0),
                                  yz ? &*yz : nullptr, xbar, xn);
                double* dst = rb.x_heun_bar.data() + (static_cast<size_t>(b) * (N + 1) + n + 1) * d;
                for (int k = 0; k < d; ++k) dst[k] = xbar[static_cast<size_t>(k)];
                x = xn;
                break;
            }
            }
            write_main(n + 1, x);
        }
    });
    return rb;
}

} // namespace fbsde
