#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "fbsde/losses.hpp"
#include "fbsde/rng.hpp"
#include "test_util.hpp"

using namespace fbsde;

namespace {

/// mu = 0, sigma = scale * I, phi = const; the synthetic setup the trivial
/// identities need.
PDEProblem constant_problem(int d, double sigma_scale, double phi_const) {
    PDEProblem p;
    p.name = "const";
    p.d = d;
    p.t_end = 1.0;
    p.x0.assign(static_cast<size_t>(d), 0.0);
    p.mu_is_zero = true;
    p.mu = [](double, Span x, Vec& out) { out.assign(x.size(), 0.0); };
    p.sigma0_diagonal = true;
    p.sigma0_diag = [sigma_scale](double, Span x, Vec& out) { out.assign(x.size(), sigma_scale); };
    p.sigma0_dense = [sigma_scale](double, Span x, Mat& out) {
        out = Mat::identity(static_cast<int>(x.size()), sigma_scale);
    };
    p.has_sigma_jacobian = true;
    p.sigma_jacobian = [d](double, Span, const double*, const Vec*, std::vector<Mat>& out) {
        out.assign(static_cast<size_t>(d), Mat(d, d));
    };
    p.phi = [phi_const](double, Span, const double&, const std::vector<double>&) {
        return phi_const;
    };
    p.phi_var = [phi_const](double, Span, const ad::Var& y, const std::vector<ad::Var>&) {
        return y * 0.0 + phi_const;
    };
    p.g = [](Span) { return 0.0; };
    p.grad_g = [](Span x, Vec& out) { out.assign(x.size(), 0.0); };
    p.g_dir2 = [](Span, Span) { return 0.0; };
    return p;
}

/// Bundle with every Brownian increment forced to zero (states collapse onto
/// x0 for drift-free problems).
RolloutBundle zero_noise_bundle(const PDEProblem& p, SchemeKind kind, int B, int N, int M,
                                double tau = 1e-3) {
    RolloutBundle rb = rollout(p, uniform_grid(N, p.t_end), {kind, M, tau}, B, nullptr, 1);
    std::fill(rb.noise.dW.begin(), rb.noise.dW.end(), 0.0);
    std::fill(rb.noise.fine_dw.begin(), rb.noise.fine_dw.end(), 0.0);
    // re-propagate: with mu = 0 every state equals x0
    for (size_t i = 0; i < rb.x_main.size(); ++i) rb.x_main[i] = p.x0[i % p.x0.size()];
    for (size_t i = 0; i < rb.x_candidates.size(); ++i) rb.x_candidates[i] = p.x0[i % p.x0.size()];
    for (size_t i = 0; i < rb.x_plus.size(); ++i) rb.x_plus[i] = p.x0[i % p.x0.size()];
    for (size_t i = 0; i < rb.x_minus.size(); ++i) rb.x_minus[i] = p.x0[i % p.x0.size()];
    for (size_t i = 0; i < rb.x_heun_bar.size(); ++i) rb.x_heun_bar[i] = p.x0[i % p.x0.size()];
    return rb;
}

Surrogate constant_surrogate(int d, double c) {
    MlpConfig cfg;
    cfg.input_dim = d + 1;
    cfg.width = 8;
    cfg.hidden_layers = 1;
    cfg.init_seed = 3;
    Surrogate s = Surrogate::create(cfg);
    for (size_t i = s.theta.size() - static_cast<size_t>(cfg.width) - 1; i < s.theta.size(); ++i)
        s.theta[i] = 0.0;
    s.theta.back() = c;
    s.sync();
    return s;
}

AnalyticField affine_field(Vec slope, double c) {
    const int d = static_cast<int>(slope.size());
    return quadratic_field(0.0, Mat(d, d), std::move(slope), c);
}

} // namespace

TEST_CASE("degenerate noise: every loss of a constant surrogate is zero") {
    const PDEProblem p = constant_problem(3, 1.0, 0.0);
    const Surrogate s = constant_surrogate(3, 0.7);

    auto em = zero_noise_bundle(p, SchemeKind::EM, 2, 3, 1);
    CHECK(loss_em(s, p, em) == 0.0);
    CHECK(loss_fs_pinns(s, p, em) == 0.0);

    auto ms = zero_noise_bundle(p, SchemeKind::MultiShot, 2, 3, 4);
    CHECK(loss_multishot_em(s, p, ms, 4) == 0.0);
    CHECK(loss_unem(s, p, ms, 2, 2) == 0.0);

    auto sg = zero_noise_bundle(p, SchemeKind::Shotgun, 2, 3, 4, 1e-3);
    CHECK(loss_shotgun(s, p, sg, 4, 1e-3) == 0.0);
    CHECK(loss_unshotgun(s, p, sg, 2, 2, 1e-3) == 0.0);

    auto he = zero_noise_bundle(p, SchemeKind::Heun, 2, 3, 1);
    CHECK(loss_heun(s, p, he) == 0.0);
}

TEST_CASE("multishot with M = 1 equals loss_em bit for bit") {
    const PDEProblem p = make_problem("BSB", 3);
    const Surrogate s = apply_hard_constraint(Surrogate::create({4, 10, 2, Activation::Mish,
                                                                 Precision::F64, 7}),
                                              p);
    const RolloutBundle rb = rollout(p, uniform_grid(5, 1.0), {SchemeKind::EM, 1, 0.0}, 3, nullptr, 2);
    CHECK(loss_multishot_em(s, p, rb, 1) == loss_em(s, p, rb));
    CHECK_THROWS_AS(loss_multishot_em(s, p, rb, 2), std::invalid_argument);
}

TEST_CASE("unem with shared draws degenerates to loss_em") {
    const PDEProblem p = make_problem("BSB", 2);
    const Surrogate s = Surrogate::create({3, 10, 2, Activation::Mish, Precision::F64, 5});
    RolloutBundle rb = rollout(p, uniform_grid(4, 1.0), {SchemeKind::MultiShot, 2, 0.0}, 2, nullptr, 8);
    // force shot 1 to replicate shot 0 everywhere
    const int N = 4, M = 2, d = 2;
    for (int b = 0; b < 2; ++b)
        for (int n = 0; n <= N; ++n)
            for (int k = 0; k < d; ++k) {
                const size_t c1 = ((static_cast<size_t>(b) * (N + 1) + n) * M + 1) * d + k;
                rb.x_candidates[c1] = rb.cand_at(b, n, 0)[static_cast<size_t>(k)];
            }
    for (int b = 0; b < 2; ++b)
        for (int n = 0; n < N; ++n)
            for (int k = 0; k < d; ++k) {
                const size_t w1 = ((static_cast<size_t>(b) * N + n) * M + 1) * d + k;
                rb.noise.dW[w1] = rb.noise.dw_at(b, n, 0)[static_cast<size_t>(k)];
            }
    CHECK(loss_unem(s, p, rb, 1, 1) == doctest::Approx(loss_em(s, p, rb)).epsilon(1e-15));
}

TEST_CASE("unem group structure") {
    const PDEProblem p = make_problem("BSB", 2);
    const Surrogate s = Surrogate::create({3, 10, 2, Activation::Mish, Precision::F64, 6});
    const RolloutBundle rb =
        rollout(p, uniform_grid(3, 1.0), {SchemeKind::MultiShot, 4, 0.0}, 2, nullptr, 12);
    const double base = loss_unem(s, p, rb, 2, 2);

    auto swap_shots = [&](RolloutBundle& r, int i, int j) {
        const int N = 3, M = 4, d = 2;
        for (int b = 0; b < 2; ++b)
            for (int n = 0; n <= N; ++n)
                for (int k = 0; k < d; ++k) {
                    const size_t ci = ((static_cast<size_t>(b) * (N + 1) + n) * M + i) * d + k;
                    const size_t cj = ((static_cast<size_t>(b) * (N + 1) + n) * M + j) * d + k;
                    std::swap(r.x_candidates[ci], r.x_candidates[cj]);
                }
        for (int b = 0; b < 2; ++b)
            for (int n = 0; n < N; ++n)
                for (int k = 0; k < d; ++k) {
                    const size_t wi = ((static_cast<size_t>(b) * N + n) * M + i) * d + k;
                    const size_t wj = ((static_cast<size_t>(b) * N + n) * M + j) * d + k;
                    std::swap(r.noise.dW[wi], r.noise.dW[wj]);
                }
    };

    // permuting within group 2 leaves the loss unchanged
    RolloutBundle perm = rb;
    swap_shots(perm, 2, 3);
    CHECK(loss_unem(s, p, perm, 2, 2) == doctest::Approx(base).epsilon(1e-15));

    // swapping across groups changes it; note candidate 0 must stay in group 1
    RolloutBundle cross = rb;
    swap_shots(cross, 1, 2);
    CHECK(loss_unem(s, p, cross, 2, 2) != base);
}

TEST_CASE("quadratic hand expansions of the one-step errors") {
    const int d = 2;
    const PDEProblem p = constant_problem(d, 1.0, 0.0);
    Mat H = Mat::identity(d, 1.0);
    H(0, 1) = 0.3;
    H(1, 0) = 0.3;
    AnalyticField u = quadratic_field(0.0, H, Vec(d, 0.0), 0.4);

    std::mt19937_64 rng(4);
    const Vec x = testutil::random_vec(rng, d);
    const Vec dW = testutil::random_vec(rng, d, -0.05, 0.05);
    const double dt = 1e-3;
    Vec xn;
    em_forward_step(p, 0.2, x, dt, dW, {}, xn);

    const double e = err_em(u, p, 0.2, x, xn, dt, dW, ErrNorm::ByDt);
    double q = 0.0;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            q += dW[static_cast<size_t>(i)] * H(i, j) * dW[static_cast<size_t>(j)];
    CHECK(e == doctest::Approx(0.5 * q / dt).epsilon(1e-10));

    // shotgun: dw^T H dw / (2 tau)
    const double tau = 1e-4;
    Vec dw = testutil::random_vec(rng, d, -0.02, 0.02);
    Vec xp = x, xm = x;
    for (int j = 0; j < d; ++j) {
        xp[static_cast<size_t>(j)] += dw[static_cast<size_t>(j)];
        xm[static_cast<size_t>(j)] -= dw[static_cast<size_t>(j)];
    }
    const double es = err_shotgun(u, p, 0.2, x, xp, xm, tau);
    double qs = 0.0;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            qs += dw[static_cast<size_t>(i)] * H(i, j) * dw[static_cast<size_t>(j)];
    CHECK(es == doctest::Approx(qs / (2.0 * tau)).epsilon(1e-10));

    // affine field, phi = 0: both errors vanish identically
    AnalyticField aff = affine_field({0.3, -0.7}, 1.1);
    CHECK(err_em(aff, p, 0.2, x, xn, dt, dW) == doctest::Approx(0.0));
    CHECK(err_shotgun(aff, p, 0.2, x, xp, xm, tau) == doctest::Approx(0.0));
}

TEST_CASE("injected exact solution: em loss shrinks with dt, fspinns residual is zero") {
    const PDEProblem p = make_problem("BSB", 3);
    AnalyticField u = exact_field(p);
    LossSpec em;
    em.method = Method::Em;

    auto em_loss_at = [&](int N) {
        const RolloutBundle rb =
            rollout(p, uniform_grid(N, 1.0), {SchemeKind::EM, 1, 0.0}, 64, nullptr, 5);
        // dt-normalized comparison across N: raw losses scale like dt^2 per
        // step times N steps
        return loss_value_analytic(em, u, p, rb);
    };
    const double l10 = em_loss_at(10);
    const double l40 = em_loss_at(40);
    CHECK(l40 < l10);

    LossSpec fs;
    fs.method = Method::FsPinns;
    const RolloutBundle rb = rollout(p, uniform_grid(10, 1.0), {SchemeKind::EM, 1, 0.0}, 8, nullptr, 6);
    CHECK(loss_value_analytic(fs, u, p, rb) < 1e-16);
}

TEST_CASE("heun loss identities") {
    // constant sigma, mu = 0, affine u, phi = 0 -> exactly zero
    const PDEProblem p = constant_problem(2, 1.3, 0.0);
    AnalyticField aff = affine_field({0.5, -0.2}, 0.9);
    const RolloutBundle rb = rollout(p, uniform_grid(4, 1.0), {SchemeKind::Heun, 1, 0.0}, 3, nullptr, 3);
    LossSpec heun;
    heun.method = Method::Heun;
    CHECK(loss_value_analytic(heun, aff, p, rb) == doctest::Approx(0.0));

    // for affine fields and constant coefficients the Heun loss equals the EM
    // loss evaluated with the corrected phi (identical here since the
    // corrections vanish for affine u and constant sigma)
    const PDEProblem pc = constant_problem(2, 1.3, 0.4);
    const RolloutBundle rh = rollout(pc, uniform_grid(4, 1.0), {SchemeKind::Heun, 1, 0.0}, 3, nullptr, 9);
    const RolloutBundle re = rollout(pc, uniform_grid(4, 1.0), {SchemeKind::EM, 1, 0.0}, 3, nullptr, 9);
    LossSpec em;
    em.method = Method::Em;
    CHECK(loss_value_analytic(heun, aff, pc, rh) ==
          doctest::Approx(loss_value_analytic(em, aff, pc, re)).epsilon(1e-12));

    // quadratic field on the zero-residual constant problem: pathwise exact,
    // so the Heun loss vanishes identically at any dt
    Mat H = Mat::identity(2, 1.0);
    const double residual_free_a = -0.5 * 1.3 * 1.3 * trace(H); // a = -1/2 Tr[sigma^T H sigma]
    AnalyticField quad = quadratic_field(residual_free_a, H, Vec(2, 0.0), 0.0);
    const RolloutBundle rq = rollout(p, uniform_grid(5, 1.0), {SchemeKind::Heun, 1, 0.0}, 4, nullptr, 13);
    CHECK(loss_value_analytic(heun, quad, p, rq) < 1e-24);
}

TEST_CASE("terminal loss") {
    const PDEProblem p = constant_problem(3, 1.0, 0.0); // g = 0, grad g = 0
    const Surrogate s = constant_surrogate(3, 0.5);
    const RolloutBundle rb = rollout(p, uniform_grid(2, 1.0), {SchemeKind::EM, 1, 0.0}, 4, nullptr, 2);
    CHECK(loss_terminal(s, p, rb) == doctest::Approx(0.25));

    const Surrogate hard = apply_hard_constraint(Surrogate::create({4, 8, 1, Activation::Mish,
                                                                    Precision::F64, 2}),
                                                 make_problem("BSB", 3));
    CHECK_THROWS_AS(loss_terminal(hard, make_problem("BSB", 3), rb), std::logic_error);
}

TEST_CASE("total loss dispatch and additivity") {
    const PDEProblem p = make_problem("BSB", 2);
    const Surrogate s = Surrogate::create({3, 10, 2, Activation::Mish, Precision::F64, 19});
    const RolloutBundle rb =
        rollout(p, uniform_grid(3, 1.0), {SchemeKind::MultiShot, 10, 0.0}, 4, nullptr, 21);

    LossSpec spec;
    spec.method = Method::UnEm;
    spec.m1 = 5;
    spec.m2 = 5;
    spec.soft = false;
    const double base = total_loss(spec, s, p, rb);
    CHECK(base == doctest::Approx(loss_unem(s, p, rb, 5, 5)));

    spec.soft = true;
    spec.lambda_t = 0.0;
    CHECK(total_loss(spec, s, p, rb) == doctest::Approx(base));
    spec.lambda_t = 1.0;
    CHECK(total_loss(spec, s, p, rb) ==
          doctest::Approx(base + loss_terminal(s, p, rb)).epsilon(1e-12));
}

TEST_CASE("shot average") {
    CHECK(shot_average(Vec{1.0}) == 1.0);
    CHECK(shot_average(Vec{1.0, 3.0}) == 2.0);
    CHECK_THROWS_AS(shot_average(Vec{}), std::invalid_argument);
    // variance reduction: the mean of M draws has M-fold smaller variance
    CounterRng rng(3, Stream::BiasLab);
    const int M = 8, n = 20000;
    double s1 = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
        Vec draws(static_cast<size_t>(M));
        for (double& v : draws) v = rng.next_normal();
        const double m = shot_average(draws);
        s1 += m;
        s2 += m * m;
    }
    const double var = s2 / n - (s1 / n) * (s1 / n);
    CHECK(var == doctest::Approx(1.0 / M).epsilon(0.1));
}

TEST_CASE("step errors expose group means") {
    const PDEProblem p = make_problem("BSB", 2);
    const Surrogate s = Surrogate::create({3, 10, 2, Activation::Mish, Precision::F64, 23});
    const RolloutBundle rb =
        rollout(p, uniform_grid(3, 1.0), {SchemeKind::MultiShot, 4, 0.0}, 2, nullptr, 31);
    const StepErrors se = compute_step_errors(s, p, rb, 2, 2);
    for (int b = 0; b < 2; ++b)
        for (int n = 0; n < 3; ++n) {
            CHECK(se.g1(b, n) == doctest::Approx(0.5 * (se.at(b, n, 0) + se.at(b, n, 1))));
            CHECK(se.g2(b, n) == doctest::Approx(0.5 * (se.at(b, n, 2) + se.at(b, n, 3))));
        }
    // loss_unem is the batch mean of summed group products
    double acc = 0.0;
    for (int b = 0; b < 2; ++b)
        for (int n = 0; n < 3; ++n) acc += se.g1(b, n) * se.g2(b, n);
    CHECK(loss_unem(s, p, rb, 2, 2) == doctest::Approx(acc / 2.0).epsilon(1e-12));
}

TEST_CASE("unem may be negative and is not clamped") {
    // zero-residual quadratic field: per-step group errors are independent,
    // zero-mean, so the batch product is negative about half the time
    const PDEProblem p = constant_problem(2, 1.0, 0.0);
    Mat H = Mat::identity(2, 1.0);
    AnalyticField u = quadratic_field(-0.5 * trace(H), H, Vec(2, 0.0), 0.0);
    LossSpec spec;
    spec.method = Method::UnEm;
    spec.m1 = 1;
    spec.m2 = 1;
    bool found_negative = false;
    for (uint64_t seed = 0; seed < 20 && !found_negative; ++seed) {
        const RolloutBundle rb =
            rollout(p, uniform_grid(1, 1.0), {SchemeKind::MultiShot, 2, 0.0}, 1, nullptr, seed);
        found_negative = loss_value_analytic(spec, u, p, rb) < 0.0;
    }
    CHECK(found_negative);
}

TEST_CASE("pide em loss uses jump terms") {
    const PDEProblem p = make_problem("PIDE", 3, {{"lambda", 50.0}}); // frequent jumps
    const Surrogate s = Surrogate::create({4, 10, 2, Activation::Mish, Precision::F64, 41});
    const RolloutBundle rb =
        rollout(p, uniform_grid(4, 1.0), {SchemeKind::Pide, 2, 0.0}, 2, nullptr, 3);
    // jumps actually drawn at this intensity
    long total = 0;
    for (int b = 0; b < 2; ++b)
        for (int n = 0; n < 4; ++n) total += rb.noise.jump_at(b, n).count;
    CHECK(total > 0);
    const double l = loss_em(s, p, rb);
    CHECK(std::isfinite(l));
    // zeroing the jump sizes changes the loss (the jump terms are live)
    RolloutBundle nz = rb;
    for (auto& rec : nz.noise.jumps) rec.sizes.assign(rec.sizes.size(), 0.0);
    CHECK(loss_em(s, p, nz) != l);
}
