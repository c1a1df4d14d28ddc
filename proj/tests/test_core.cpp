#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fbsde/ad.hpp"
#include "fbsde/common.hpp"
#include "fbsde/grid.hpp"
#include "fbsde/rng.hpp"
#include "test_util.hpp"

using namespace fbsde;

TEST_CASE("counter rng is a pure function of its key") {
    CounterRng a(42, Stream::MainIncrement, 1, 2, 3);
    CounterRng b(42, Stream::MainIncrement, 1, 2, 3);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    CounterRng c(42, Stream::MainIncrement, 1, 2, 4);
    CounterRng d(42, Stream::FineIncrement, 1, 2, 3);
    CHECK(CounterRng(42, Stream::MainIncrement, 1, 2, 3).next_u64() != c.next_u64());
    CHECK(CounterRng(42, Stream::MainIncrement, 1, 2, 3).next_u64() != d.next_u64());
}

TEST_CASE("gaussian moments") {
    CounterRng rng(7, Stream::BiasLab);
    const long n = 400000;
    double s1 = 0.0, s2 = 0.0, s4 = 0.0;
    for (long i = 0; i < n; ++i) {
        const double x = rng.next_normal();
        s1 += x;
        s2 += x * x;
        s4 += x * x * x * x;
    }
    CHECK(std::abs(s1 / n) < 0.01);
    CHECK(std::abs(s2 / n - 1.0) < 0.01);
    CHECK(std::abs(s4 / n - 3.0) < 0.05);
}

TEST_CASE("poisson mean") {
    CounterRng rng(11, Stream::JumpCount);
    const long n = 200000;
    long total = 0;
    for (long i = 0; i < n; ++i) total += rng.next_poisson(0.25);
    CHECK(std::abs(static_cast<double>(total) / n - 0.25) < 0.01);
}

TEST_CASE("tape reverse matches finite differences") {
    // f(a, b) = (a*b + a - 2/b) * (b - 0.5)
    auto f = [](double a, double b) { return (a * b + a - 2.0 / b) * (b - 0.5); };
    const double a0 = 1.3, b0 = 0.7;
    ad::Tape tape;
    ad::Var a = ad::make_var(tape, a0);
    ad::Var b = ad::make_var(tape, b0);
    ad::Var out = (a * b + a - 2.0 / b) * (b - 0.5);
    CHECK(out.v == doctest::Approx(f(a0, b0)));
    tape.backward(out.id);
    const double ga = testutil::central_diff([&](double x) { return f(x, b0); }, a0, 1e-6);
    const double gb = testutil::central_diff([&](double x) { return f(a0, x); }, b0, 1e-6);
    CHECK(tape.adjoint(a.id) == doctest::Approx(ga).epsilon(1e-7));
    CHECK(tape.adjoint(b.id) == doctest::Approx(gb).epsilon(1e-7));
}

TEST_CASE("uniform grid") {
    TimeGrid g = uniform_grid(1, 1.0);
    CHECK(g.t == Vec{0.0, 1.0});
    CHECK(g.dt == Vec{1.0});

    g = uniform_grid(100, 1.0);
    for (double dt : g.dt) CHECK(dt == doctest::Approx(0.01));

    g = uniform_grid(4, 0.3);
    CHECK(g.t[1] == doctest::Approx(0.075));
    CHECK(g.t[2] == doctest::Approx(0.15));
    CHECK(g.t[3] == doctest::Approx(0.225));
    CHECK(g.t[4] == doctest::Approx(0.3));

    CHECK_THROWS_AS(uniform_grid(0, 1.0), std::invalid_argument);
}

TEST_CASE("shotgun grid") {
    TimeGrid g = shotgun_grid(2, 1.0, 5);
    CHECK(g.t.size() == 3);
    CHECK(g.t[0] == 0.0);
    CHECK(g.t[1] > 0.0);
    CHECK(g.t[1] < 1.0);
    CHECK(g.t[2] == 1.0);

    g = shotgun_grid(10, 1.0, 123);
    for (int n = 1; n <= 8; ++n) CHECK(g.dt[static_cast<size_t>(n)] == doctest::Approx(1.0 / 9.0));
    CHECK(g.dt[0] + g.dt[9] == doctest::Approx(1.0 / 9.0));
    for (double dt : g.dt) CHECK(dt > 0.0);

    // determinism per seed
    TimeGrid g2 = shotgun_grid(10, 1.0, 123);
    CHECK(g.t == g2.t);
    CHECK(shotgun_grid(10, 1.0, 124).t[1] != g.t[1]);

    CHECK_THROWS_AS(shotgun_grid(1, 1.0, 0), std::invalid_argument);
}

TEST_CASE("parallel_for matches serial") {
    Vec a(1000), b(1000);
    parallel_for(Exec::Serial, 1000, [&](int i) { a[static_cast<size_t>(i)] = std::sin(i * 0.1); });
    parallel_for(Exec::Parallel, 1000, [&](int i) { b[static_cast<size_t>(i)] = std::sin(i * 0.1); });
    CHECK(a == b);
}
