#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fbsde/training.hpp"
#include "test_util.hpp"

using namespace fbsde;

TEST_CASE("adam: zero gradients leave parameters unchanged, moments decay") {
    AdamState st;
    st.init(3);
    Vec params = {1.0, 2.0, 3.0};
    const Vec before = params;
    const Vec zero(3, 0.0);
    adam_step(st, params, zero, 0.1);
    CHECK(params == before); // zero moments stay zero, update is 0/(0+eps)

    st.m = {1.0, -2.0, 0.5};
    st.v = {0.5, 0.5, 0.5};
    adam_step(st, params, zero, 0.0); // lr 0 isolates the moment decay
    CHECK(st.m[0] == doctest::Approx(0.9));
    CHECK(st.v[0] == doctest::Approx(0.4995));
}

TEST_CASE("adam: single step from zero moments matches the hand formula") {
    AdamState st;
    st.init(2);
    Vec params = {1.0, -1.0};
    const Vec g = {0.3, -0.7};
    const double lr = 0.01;
    adam_step(st, params, g, lr);
    for (int i = 0; i < 2; ++i) {
        // mhat = g, vhat = g^2 -> update = -lr * g / (|g| + eps)
        const double want = (i == 0 ? 1.0 : -1.0) -
                            lr * g[static_cast<size_t>(i)] /
                                (std::abs(g[static_cast<size_t>(i)]) + 1e-8);
        CHECK(params[static_cast<size_t>(i)] == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("adam: trace matches an independent re-implementation") {
    AdamState st;
    st.init(1);
    Vec params = {0.8};
    // independent naive implementation
    double p2 = 0.8, m = 0.0, v = 0.0;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    for (int t = 1; t <= 20; ++t) {
        const double g = u(rng);
        adam_step(st, params, Vec{g}, 0.02);
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g * g;
        const double mhat = m / (1.0 - std::pow(0.9, t));
        const double vhat = v / (1.0 - std::pow(0.999, t));
        p2 -= 0.02 * mhat / (std::sqrt(vhat) + 1e-8);
        CHECK(std::abs(params[0] - p2) < 1e-12);
    }
}

TEST_CASE("adam: non-finite gradient aborts") {
    AdamState st;
    st.init(1);
    Vec params = {1.0};
    CHECK_THROWS_AS(adam_step(st, params, Vec{std::nan("")}, 0.1), std::runtime_error);
}

TEST_CASE("adam: monotone descent on a convex quadratic") {
    AdamState st;
    st.init(1);
    Vec params = {2.0};
    double prev = params[0] * params[0];
    for (int t = 0; t < 60; ++t) {
        adam_step(st, params, Vec{2.0 * params[0]}, 0.05);
        const double f = params[0] * params[0];
        CHECK(f <= prev + 1e-12);
        prev = f;
    }
}

TEST_CASE("lr schedules") {
    Schedule cos;
    cos.kind = ScheduleKind::Cosine;
    CHECK(lr_schedule(cos, 0, 100, 1e-3) == doctest::Approx(1e-3));
    CHECK(lr_schedule(cos, 100, 100, 1e-3) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(lr_schedule(cos, 50, 100, 1e-3) == doctest::Approx(0.5e-3));
    CHECK_THROWS_AS(lr_schedule(cos, 101, 100, 1e-3), std::invalid_argument);

    Schedule pw;
    pw.kind = ScheduleKind::Piecewise;
    pw.boundaries = {0.5};
    pw.factors = {1.0, 0.1};
    CHECK(lr_schedule(pw, 60, 100, 2.0) == doctest::Approx(0.2));
    CHECK(lr_schedule(pw, 40, 100, 2.0) == doctest::Approx(2.0));
}

TEST_CASE("reference trajectories carry exact values") {
    const PDEProblem p = make_problem("BSB", 3);
    const EvalSet ev = generate_reference_trajectories(p, 4, uniform_grid(5, 1.0), 17);
    CHECK(ev.count == 4);
    for (int i = 0; i < 4; ++i)
        for (int n = 0; n <= 5; ++n)
            CHECK(ev.ref_at(i, n) ==
                  doctest::Approx(p.exact(ev.grid.t[static_cast<size_t>(n)], ev.state_at(i, n))));

    // AC degenerates to the single reference pair
    const PDEProblem ac = make_problem("AC");
    const EvalSet ea = generate_reference_trajectories(ac, 16, uniform_grid(5, 0.3), 3);
    CHECK(ea.only_t0);
    CHECK(ea.count == 1);
    CHECK(ea.ref_at(0, 0) == 0.30879);

    CHECK_THROWS_AS(generate_reference_trajectories(make_problem("AC", 5), 4, uniform_grid(5, 0.3), 3),
                    std::invalid_argument);
}

TEST_CASE("rl2 formula") {
    // single node, ref 2, prediction from a constant surrogate
    MlpConfig cfg;
    cfg.input_dim = 3;
    cfg.width = 4;
    cfg.hidden_layers = 1;
    Surrogate s = Surrogate::create(cfg);
    for (size_t i = s.theta.size() - 5; i < s.theta.size(); ++i) s.theta[i] = 0.0;
    s.theta.back() = 1.0; // u == 1
    s.sync();

    EvalSet ev;
    ev.grid = uniform_grid(1, 1.0);
    ev.count = 1;
    ev.d = 2;
    ev.only_t0 = true;
    ev.states = {0.0, 0.0, 0.0, 0.0};
    ev.refs = {2.0, 2.0};
    CHECK(rl2(s, ev) == doctest::Approx(0.5));

    // scale covariance: constant predictions r + c*delta scale rl2 by |c|
    Surrogate s2 = s;
    s2.theta.back() = 2.0 - 2.0 * (2.0 - 1.0); // r + 2*(pred - r) = 0
    s2.sync();
    CHECK(rl2(s2, ev) == doctest::Approx(2.0 * rl2(s, ev)));

    ev.refs = {0.0, 0.0};
    CHECK_THROWS_AS(rl2(s, ev), std::invalid_argument);
}

TEST_CASE("train: zero iterations returns the initial surrogate") {
    const PDEProblem p = make_problem("BSB", 2);
    TrainConfig cfg;
    cfg.iterations = 0;
    cfg.batch_size = 2;
    cfg.n_steps = 3;
    cfg.n_eval_trajectories = 2;
    cfg.network.width = 8;
    cfg.network.hidden_layers = 1;
    cfg.network.init_seed = 7;
    cfg.loss.method = Method::Em;
    const TrainResult res = train(p, cfg);
    MlpConfig ncfg = cfg.network;
    ncfg.input_dim = 3;
    CHECK(res.surrogate.theta == init_params(ncfg));
    CHECK(res.record.log.size() == 1);
    CHECK_FALSE(res.record.aborted);
}

TEST_CASE("train: deterministic per seed") {
    const PDEProblem p = make_problem("BSB", 2);
    TrainConfig cfg;
    cfg.iterations = 12;
    cfg.batch_size = 4;
    cfg.n_steps = 4;
    cfg.eval_every = 4;
    cfg.n_eval_trajectories = 2;
    cfg.network.width = 8;
    cfg.network.hidden_layers = 1;
    cfg.network.init_seed = 3;
    cfg.seed = 99;
    cfg.loss.method = Method::UnEm;
    cfg.loss.m1 = 2;
    cfg.loss.m2 = 2;
    const TrainResult a = train(p, cfg, Exec::Serial);
    const TrainResult b = train(p, cfg, Exec::Parallel);
    CHECK(a.surrogate.theta == b.surrogate.theta);
    REQUIRE(a.record.log.size() == b.record.log.size());
    for (size_t i = 0; i < a.record.log.size(); ++i) {
        CHECK(a.record.log[i].iteration == b.record.log[i].iteration);
        CHECK(a.record.log[i].loss == b.record.log[i].loss);
        CHECK(a.record.log[i].lr == b.record.log[i].lr);
        const bool both_nan =
            std::isnan(a.record.log[i].rl2) && std::isnan(b.record.log[i].rl2);
        CHECK((both_nan || a.record.log[i].rl2 == b.record.log[i].rl2));
    }

    TrainConfig cfg2 = cfg;
    cfg2.seed = 100;
    const TrainResult c = train(p, cfg2);
    CHECK(a.surrogate.theta != c.surrogate.theta);
}

TEST_CASE("train: learning happens at desk scale") {
    const PDEProblem p = make_problem("BSB", 2);
    TrainConfig cfg;
    cfg.iterations = 200;
    cfg.batch_size = 8;
    cfg.n_steps = 8;
    cfg.eval_every = 100;
    cfg.n_eval_trajectories = 4;
    cfg.network.width = 16;
    cfg.network.hidden_layers = 2;
    cfg.network.init_seed = 11;
    cfg.seed = 7;
    cfg.loss.method = Method::UnEm;
    cfg.loss.m1 = 2;
    cfg.loss.m2 = 2;
    const TrainResult res = train(p, cfg);
    REQUIRE_FALSE(res.record.aborted);
    REQUIRE(res.record.log.size() >= 2);
    const double rl2_start = res.record.log.front().rl2;
    const double rl2_end = res.record.log.back().rl2;
    CHECK(std::isfinite(rl2_start));
    CHECK(rl2_end < rl2_start);
}

TEST_CASE("train: aborts on blow-up with the iteration recorded") {
    const PDEProblem p = make_problem("BSB", 2);
    TrainConfig cfg;
    cfg.iterations = 50;
    cfg.batch_size = 2;
    cfg.n_steps = 2;
    cfg.lr = 1e300; // guaranteed detonation
    cfg.eval_every = 1000;
    cfg.n_eval_trajectories = 1;
    cfg.network.width = 8;
    cfg.network.hidden_layers = 1;
    cfg.loss.method = Method::Em;
    const TrainResult res = train(p, cfg);
    CHECK(res.record.aborted);
    CHECK(res.record.abort_iteration >= 0);
    CHECK_FALSE(res.record.abort_reason.empty());
}

TEST_CASE("train rejects incompatible method/problem pairs") {
    const PDEProblem pide = make_problem("PIDE", 2);
    TrainConfig cfg;
    cfg.iterations = 1;
    cfg.network.width = 4;
    cfg.network.hidden_layers = 1;
    cfg.loss.method = Method::Heun;
    CHECK_THROWS_AS(train(pide, cfg), std::invalid_argument);
    cfg.loss.method = Method::Shotgun;
    CHECK_THROWS_AS(train(pide, cfg), std::invalid_argument);
    cfg.loss.method = Method::FsPinns;
    CHECK_THROWS_AS(train(pide, cfg), std::invalid_argument);
}
