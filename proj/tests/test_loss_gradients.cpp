#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "fbsde/losses.hpp"
#include "test_util.hpp"

using namespace fbsde;

namespace {

struct GradCheck {
    double max_rel_err = 0.0;
    int checked = 0;
};

/// Central finite differences over randomly chosen parameter coordinates,
/// bundle held fixed (the differentiation boundary of the loss contract).
GradCheck check_gradient(const LossSpec& spec, const Surrogate& s, const PDEProblem& p,
                         const RolloutBundle& rb, int n_coords, uint64_t seed) {
    const LossGrad lg = total_loss_gradient(spec, s, p, rb, Exec::Serial);
    // direct value agreement
    const double direct = total_loss(spec, s, p, rb, Exec::Serial);
    REQUIRE(lg.value == doctest::Approx(direct).epsilon(1e-12));

    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<size_t> pick(0, s.theta.size() - 1);
    GradCheck out;
    int tries = 0;
    while (out.checked < n_coords && tries < 6 * n_coords) {
        ++tries;
        const size_t i = pick(rng);
        const double h = 1e-6 * std::max(1.0, std::abs(s.theta[i]));
        auto f = [&](double v) {
            Surrogate sp = s;
            sp.theta[i] = v;
            sp.sync();
            return total_loss(spec, sp, p, rb, Exec::Serial);
        };
        const double fd = (f(s.theta[i] + h) - f(s.theta[i] - h)) / (2.0 * h);
        if (std::abs(fd) < 1e-9 && std::abs(lg.grad[i]) < 1e-9) continue;
        out.max_rel_err = std::max(out.max_rel_err, testutil::rel_err(lg.grad[i], fd, 1e-7));
        ++out.checked;
    }
    return out;
}

Surrogate small_net(int d, uint64_t seed) {
    MlpConfig cfg;
    cfg.input_dim = d + 1;
    cfg.width = 10;
    cfg.hidden_layers = 2;
    cfg.init_seed = seed;
    Surrogate s = Surrogate::create(cfg);
    // give the net a nonzero output scale so errors are informative
    return s;
}

} // namespace

TEST_CASE("em / multishot / unem gradients match finite differences") {
    const PDEProblem p = make_problem("BSB", 2);
    for (uint64_t seed : {1ull, 2ull}) {
        const Surrogate s = small_net(2, seed);
        const RolloutBundle rb =
            rollout(p, uniform_grid(2, 1.0), {SchemeKind::MultiShot, 4, 0.0}, 2, nullptr, seed + 10);

        for (Method m : {Method::Em, Method::MultiShotEm, Method::UnEm}) {
            LossSpec spec;
            spec.method = m;
            spec.m = 4;
            spec.m1 = 2;
            spec.m2 = 2;
            const GradCheck gc = check_gradient(spec, s, p, rb, 25, seed * 7 + 1);
            INFO(method_name(m), " seed ", seed, " rel err ", gc.max_rel_err);
            CHECK(gc.checked >= 10);
            CHECK(gc.max_rel_err < 1e-4);
        }
    }
}

TEST_CASE("soft constraint gradient matches finite differences") {
    const PDEProblem p = make_problem("BSB", 2);
    const Surrogate s = small_net(2, 3);
    const RolloutBundle rb =
        rollout(p, uniform_grid(2, 1.0), {SchemeKind::MultiShot, 2, 0.0}, 2, nullptr, 5);
    LossSpec spec;
    spec.method = Method::UnEm;
    spec.m1 = 1;
    spec.m2 = 1;
    spec.soft = true;
    spec.lambda_t = 0.7;
    const GradCheck gc = check_gradient(spec, s, p, rb, 25, 17);
    CHECK(gc.max_rel_err < 1e-4);
}

TEST_CASE("shotgun / unshotgun gradients match finite differences") {
    const PDEProblem p = make_problem("BSB", 2);
    const Surrogate s = small_net(2, 4);
    const double tau = 1e-3;
    const RolloutBundle rb =
        rollout(p, shotgun_grid(3, 1.0, 2), {SchemeKind::Shotgun, 4, tau}, 2, nullptr, 6);
    for (Method m : {Method::Shotgun, Method::UnShotgun}) {
        LossSpec spec;
        spec.method = m;
        spec.m = 4;
        spec.m1 = 2;
        spec.m2 = 2;
        spec.tau = tau;
        const GradCheck gc = check_gradient(spec, s, p, rb, 20, 23);
        INFO(method_name(m), " rel err ", gc.max_rel_err);
        CHECK(gc.max_rel_err < 1e-4);
    }
}

TEST_CASE("heun gradient matches finite differences on BSB") {
    const PDEProblem p = make_problem("BSB", 2);
    const Surrogate s = small_net(2, 5);
    const RolloutBundle rb = rollout(p, uniform_grid(2, 1.0), {SchemeKind::Heun, 1, 0.0}, 2, nullptr, 7);
    LossSpec spec;
    spec.method = Method::Heun;
    const GradCheck gc = check_gradient(spec, s, p, rb, 20, 29);
    CHECK(gc.max_rel_err < 1e-3);
}

TEST_CASE("heun gradient matches finite differences on the coupled BZ") {
    const PDEProblem p = make_problem("BZ", 2);
    const Surrogate s = small_net(2, 6);
    const RolloutBundle rb = rollout(p, uniform_grid(2, 1.0), {SchemeKind::Heun, 1, 0.0}, 2, &s, 8);
    LossSpec spec;
    spec.method = Method::Heun;
    const GradCheck gc = check_gradient(spec, s, p, rb, 20, 31);
    CHECK(gc.max_rel_err < 1e-3);
}

TEST_CASE("em-family gradient on the coupled BZ (value-coupled diffusion chain)") {
    const PDEProblem p = make_problem("BZ", 2);
    const Surrogate s = small_net(2, 7);
    const RolloutBundle rb =
        rollout(p, uniform_grid(2, 1.0), {SchemeKind::MultiShot, 3, 0.0}, 2, &s, 9);
    LossSpec spec;
    spec.method = Method::UnEm;
    spec.m1 = 1;
    spec.m2 = 2;
    const GradCheck gc = check_gradient(spec, s, p, rb, 20, 37);
    CHECK(gc.max_rel_err < 1e-4);
}

TEST_CASE("fspinns gradient matches finite differences") {
    const PDEProblem p = make_problem("BSB", 2);
    const Surrogate s = small_net(2, 8);
    const RolloutBundle rb = rollout(p, uniform_grid(2, 1.0), {SchemeKind::EM, 1, 0.0}, 2, nullptr, 10);
    LossSpec spec;
    spec.method = Method::FsPinns;
    const GradCheck gc = check_gradient(spec, s, p, rb, 20, 41);
    CHECK(gc.max_rel_err < 1e-3);
}

TEST_CASE("pide em gradient includes jump evaluations") {
    const PDEProblem p = make_problem("PIDE", 2, {{"lambda", 80.0}});
    const Surrogate s = small_net(2, 9);
    const RolloutBundle rb = rollout(p, uniform_grid(3, 1.0), {SchemeKind::Pide, 2, 0.0}, 2, nullptr, 11);
    long jumps = 0;
    for (int b = 0; b < 2; ++b)
        for (int n = 0; n < 3; ++n) jumps += rb.noise.jump_at(b, n).count;
    REQUIRE(jumps > 0);
    LossSpec spec;
    spec.method = Method::UnEm;
    spec.m1 = 1;
    spec.m2 = 1;
    const GradCheck gc = check_gradient(spec, s, p, rb, 20, 43);
    CHECK(gc.max_rel_err < 1e-4);
}

TEST_CASE("hard-constrained gradients match finite differences") {
    const PDEProblem p = make_problem("BSB", 2);
    const Surrogate s = apply_hard_constraint(small_net(2, 10), p);
    const RolloutBundle rb =
        rollout(p, uniform_grid(2, 1.0), {SchemeKind::MultiShot, 2, 0.0}, 2, nullptr, 12);
    LossSpec spec;
    spec.method = Method::UnEm;
    spec.m1 = 1;
    spec.m2 = 1;
    const GradCheck gc = check_gradient(spec, s, p, rb, 20, 47);
    CHECK(gc.max_rel_err < 1e-4);
}

TEST_CASE("parallel and serial gradients are bit identical") {
    const PDEProblem p = make_problem("BSB", 3);
    const Surrogate s = small_net(3, 11);
    const RolloutBundle rb =
        rollout(p, uniform_grid(4, 1.0), {SchemeKind::MultiShot, 10, 0.0}, 8, nullptr, 13);
    LossSpec spec;
    spec.method = Method::UnEm;
    spec.m1 = 5;
    spec.m2 = 5;
    const LossGrad a = total_loss_gradient(spec, s, p, rb, Exec::Serial);
    const LossGrad b = total_loss_gradient(spec, s, p, rb, Exec::Parallel);
    CHECK(a.value == b.value);
    CHECK(a.grad == b.grad);
}
