#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "fbsde/fields.hpp"
#include "fbsde/problems.hpp"
#include "test_util.hpp"

using namespace fbsde;

namespace {

Vec domain_point(std::mt19937_64& rng, const PDEProblem& p) {
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    Vec x = p.x0;
    for (double& v : x) v += u(rng);
    return x;
}

/// PDE residual of the closed form by finite differences in t and x. The
/// oracle touches only problem.exact, never the library's derivative code.
double fd_residual(const PDEProblem& p, double t, const Vec& x) {
    const double ht = 1e-5;
    const double hx = 1e-4;
    auto u_at = [&](double tt, const Vec& xx) { return p.exact(tt, xx); };
    const double ut = (u_at(t + ht, x) - u_at(t - ht, x)) / (2.0 * ht);
    const double u0 = u_at(t, x);
    Vec grad(x.size()), hdiag(x.size());
    for (size_t j = 0; j < x.size(); ++j) {
        Vec xp = x, xm = x;
        xp[j] += hx;
        xm[j] -= hx;
        grad[j] = (u_at(t, xp) - u_at(t, xm)) / (2.0 * hx);
        hdiag[j] = (u_at(t, xp) - 2.0 * u0 + u_at(t, xm)) / (hx * hx);
    }
    const double y = u0;
    const double phi = p.phi(t, x, y, grad);
    Vec mu;
    p.mu(t, x, mu);
    Vec sdiag;
    p.sigma_diag(t, x, p.coupled ? std::optional<double>(y) : std::nullopt, sdiag);
    double trace_term = 0.0;
    for (size_t j = 0; j < x.size(); ++j) trace_term += sdiag[j] * sdiag[j] * hdiag[j];
    return ut + dot(mu, grad) + 0.5 * trace_term - phi;
}

} // namespace

TEST_CASE("catalog defaults match the source configurations") {
    const PDEProblem bsb = make_problem("BSB");
    CHECK(bsb.d == 100);
    CHECK(bsb.t_end == 1.0);
    CHECK(bsb.params.at("alpha") == 0.4);
    CHECK(bsb.params.at("r") == 0.05);
    CHECK(bsb.x0[0] == 1.0);
    CHECK(bsb.x0[1] == 0.5);
    CHECK(bsb.x0[98] == 1.0);
    CHECK(bsb.x0[99] == 0.5);

    const PDEProblem ac = make_problem("AC");
    CHECK(ac.d == 20);
    CHECK(ac.t_end == 0.3);
    CHECK(ac.reference_u0 == 0.30879);
    CHECK_FALSE(make_problem("AC", 5).reference_u0.has_value());

    const PDEProblem hjb = make_problem("HJB");
    CHECK(hjb.d == 100);
    CHECK_FALSE(hjb.has_exact);

    const PDEProblem bz = make_problem("BZ");
    CHECK(bz.coupled);
    CHECK(bz.params.at("alpha") == 0.3);
    CHECK(bz.params.at("D") == 0.1);

    const PDEProblem pide = make_problem("PIDE");
    CHECK(pide.jump_spec.has_value());
    CHECK(pide.jump_spec->lambda == 0.01);
    Vec zero(static_cast<size_t>(pide.d), 0.0);
    CHECK(exact_solution(pide, 0.3, zero) == 0.0);

    CHECK_THROWS_AS(make_problem("XX"), std::invalid_argument);
    CHECK_THROWS_AS(make_problem("BSB", 10, {{"lambda", 1.0}}), std::invalid_argument);
    CHECK_THROWS_AS(make_problem("BSB", 10, {{"alpha", -1.0}}), std::invalid_argument);
}

TEST_CASE("exact solutions") {
    const PDEProblem bsb = make_problem("BSB", 7);
    std::mt19937_64 rng(2);
    const Vec x = testutil::random_vec(rng, 7, 0.2, 1.5);
    CHECK(exact_solution(bsb, bsb.t_end, x) == doctest::Approx(bsb.g(x)).epsilon(1e-12));
    Vec unit(7, 0.0);
    unit[0] = 1.0;
    CHECK(exact_solution(bsb, 0.0, unit) == doctest::Approx(std::exp(0.21)));
    CHECK(exact_solution(bsb, 0.0, unit) == doctest::Approx(1.2336780599567432));

    const PDEProblem bz = make_problem("BZ");
    CHECK(exact_solution(bz, bz.t_end, bz.x0) == doctest::Approx(10.0));

    const PDEProblem hjb = make_problem("HJB");
    CHECK_THROWS_AS(exact_solution(hjb, 0.0, hjb.x0), std::logic_error);
}

TEST_CASE("terminal data consistency") {
    std::mt19937_64 rng(5);
    for (const std::string& name : problem_names()) {
        const PDEProblem p = make_problem(name, 4);
        // exact(t_end, .) == g
        if (p.has_exact) {
            for (int k = 0; k < 20; ++k) {
                const Vec x = domain_point(rng, p);
                CHECK(testutil::rel_err(p.exact(p.t_end, x), p.g(x), 1e-12) < 1e-10);
            }
        }
        // grad_g and g_dir2 against finite differences
        for (int k = 0; k < 5; ++k) {
            const Vec x = domain_point(rng, p);
            Vec gg;
            p.grad_g(x, gg);
            for (size_t j = 0; j < 4; ++j) {
                auto f = [&](double v) {
                    Vec xx = x;
                    xx[j] = v;
                    return p.g(xx);
                };
                CHECK(testutil::rel_err(gg[j], testutil::central_diff(f, x[j], 1e-6), 1e-8) < 1e-6);
            }
            const Vec v = testutil::random_vec(rng, 4);
            auto fv = [&](double e) {
                Vec xx = x;
                for (size_t j = 0; j < 4; ++j) xx[j] += e * v[j];
                return p.g(xx);
            };
            CHECK(testutil::rel_err(p.g_dir2(x, v), testutil::second_central_diff(fv, 0.0, 1e-4),
                                    1e-7) < 1e-4);
        }
    }
}

TEST_CASE("closed forms satisfy their PDEs at random points") {
    std::mt19937_64 rng(11);
    for (const char* name : {"BSB", "BZ"}) {
        const PDEProblem p = make_problem(name, 6);
        for (int k = 0; k < 100; ++k) {
            std::uniform_real_distribution<double> ut(0.0, p.t_end * 0.99);
            const double t = ut(rng);
            const Vec x = domain_point(rng, p);
            CHECK(std::abs(fd_residual(p, t, x)) < 1e-4);
        }
    }
    // PIDE: the nonlocal term equals lambda*(mu^2+sigma^2) analytically for
    // the quadratic solution; add it to the local finite-difference residual.
    const PDEProblem p = make_problem("PIDE", 6);
    const JumpSpec js = *p.jump_spec;
    std::uniform_real_distribution<double> ut(0.0, p.t_end * 0.99);
    for (int k = 0; k < 100; ++k) {
        const double t = ut(rng);
        const Vec x = domain_point(rng, p);
        // local part: fd_residual already subtracts the full phi, which
        // contains the compensated-jump contribution; the analytic integral
        // term for u = |x|^2/d is exactly lambda*(mu^2+sigma^2).
        const double integral = js.lambda * (js.mu_phi * js.mu_phi + js.sigma_phi * js.sigma_phi);
        CHECK(std::abs(fd_residual(p, t, x) + integral) < 1e-4);
    }
}

TEST_CASE("make_problem is pure") {
    const PDEProblem a = make_problem("BSB", 5);
    const PDEProblem b = make_problem("BSB", 5);
    std::mt19937_64 rng(3);
    for (int k = 0; k < 10; ++k) {
        const Vec x = testutil::random_vec(rng, 5);
        const Vec z = testutil::random_vec(rng, 5);
        const double y = 0.7;
        CHECK(a.phi(0.3, x, y, z) == b.phi(0.3, x, y, z));
        CHECK(a.g(x) == b.g(x));
        Vec da, db;
        a.sigma_diag(0.3, x, {}, da);
        b.sigma_diag(0.3, x, {}, db);
        CHECK(da == db);
    }
}

TEST_CASE("hjb reference mc") {
    const PDEProblem p = make_problem("HJB", 2);
    Vec zero(2, 0.0);

    // t = t_end: exact, zero variance
    auto at_end = hjb_reference_mc(p, zero, p.t_end, 10, 1);
    CHECK(at_end.mean == doctest::Approx(std::log(0.5)));
    CHECK(at_end.std_error == 0.0);

    Vec x = {0.3, -0.2};
    auto ex = hjb_reference_mc(p, x, p.t_end, 5, 9);
    CHECK(ex.mean == doctest::Approx(p.g(x)));

    // deterministic per seed, policy independent
    auto a = hjb_reference_mc(p, zero, 0.0, 50000, 7, Exec::Serial);
    auto b = hjb_reference_mc(p, zero, 0.0, 50000, 7, Exec::Parallel);
    CHECK(a.mean == b.mean);
    CHECK(a.std_error == b.std_error);

    // against an independent radial quadrature at t = 0, x = 0, d = 2:
    //   E[exp(-g)] = int_0^inf exp(-s/2)/(1+2s)/2 * 2 ds with s = |xi|^2 ~ chi^2_2
    auto integrand = [](double s) { return 0.5 * std::exp(-0.5 * s) * 2.0 / (1.0 + 2.0 * s); };
    double quad = 0.0;
    const int K = 4'000'000;
    const double hi = 80.0;
    const double h = hi / K;
    for (int i = 0; i < K; ++i) {
        const double s0 = i * h;
        quad += h / 6.0 * (integrand(s0) + 4.0 * integrand(s0 + 0.5 * h) + integrand(s0 + h));
    }
    const double want = -std::log(quad);
    auto mc = hjb_reference_mc(p, zero, 0.0, 1'000'000, 42);
    CHECK(std::abs(mc.mean - want) < 4.0 * mc.std_error + 1e-6);

    // stderr shrinks like n^{-1/2}
    auto s1 = hjb_reference_mc(p, zero, 0.0, 40000, 3);
    auto s4 = hjb_reference_mc(p, zero, 0.0, 160000, 4);
    CHECK(s4.std_error < s1.std_error);
    CHECK(std::abs(s1.std_error / s4.std_error - 2.0) < 0.4);
}

TEST_CASE("heun drift correction formulas") {
    // BSB: correction_j = alpha^2 x_j / 2
    const PDEProblem bsb = make_problem("BSB", 3);
    const Vec x = {1.0, -0.5, 2.0};
    Vec corr;
    heun_drift_correction(bsb, 0.2, x, nullptr, nullptr, corr);
    const double a2 = 0.4 * 0.4;
    for (int j = 0; j < 3; ++j)
        CHECK(corr[static_cast<size_t>(j)] == doctest::Approx(0.5 * a2 * x[static_cast<size_t>(j)]));

    // HJB: zero
    const PDEProblem hjb = make_problem("HJB", 3);
    heun_drift_correction(hjb, 0.2, x, nullptr, nullptr, corr);
    for (double c : corr) CHECK(c == 0.0);

    // BZ: correction = alpha^2 y z / 2
    const PDEProblem bz = make_problem("BZ", 3);
    const double y = 0.8;
    const Vec z = {0.1, -0.2, 0.3};
    heun_drift_correction(bz, 0.2, x, &y, &z, corr);
    for (int j = 0; j < 3; ++j)
        CHECK(corr[static_cast<size_t>(j)] ==
              doctest::Approx(0.5 * 0.3 * 0.3 * y * z[static_cast<size_t>(j)]));
    CHECK_THROWS_AS(heun_drift_correction(bz, 0.2, x, &y, nullptr, corr), std::invalid_argument);
}

TEST_CASE("analytic exact fields differentiate correctly") {
    std::mt19937_64 rng(6);
    for (const char* name : {"BSB", "BZ", "PIDE"}) {
        const PDEProblem p = make_problem(name, 3);
        AnalyticField f = exact_field(p);
        const Vec x = domain_point(rng, p);
        const double t = 0.4 * p.t_end;
        CHECK(f.value(t, x) == doctest::Approx(p.exact(t, x)));
        double u = 0.0, td = 0.0;
        Vec grad;
        f.value_grad(t, x, u, &td, grad);
        auto ft = [&](double tt) { return p.exact(tt, x); };
        CHECK(testutil::rel_err(td, testutil::central_diff(ft, t, 1e-6), 1e-9) < 1e-6);
        for (size_t j = 0; j < 3; ++j) {
            auto fx = [&](double v) {
                Vec xx = x;
                xx[j] = v;
                return p.exact(t, xx);
            };
            CHECK(testutil::rel_err(grad[j], testutil::central_diff(fx, x[j], 1e-6), 1e-9) < 1e-6);
        }
        const Vec v = testutil::random_vec(rng, 3);
        auto fv = [&](double e) {
            Vec xx = x;
            for (size_t j = 0; j < 3; ++j) xx[j] += e * v[j];
            return p.exact(t, xx);
        };
        CHECK(testutil::rel_err(f.dir2(t, x, v), testutil::second_central_diff(fv, 0.0, 1e-4),
                                1e-8) < 1e-5);
    }
}
