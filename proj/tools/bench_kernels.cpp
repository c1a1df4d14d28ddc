// Compares the serial reference path against the OpenMP path for the
// data-parallel kernels and confirms their outputs agree bit for bit.
#include <chrono>
#include <cstdio>

#include "fbsde/biaslab.hpp"
#include "fbsde/training.hpp"

using namespace fbsde;

namespace {

template <class F>
double time_s(F&& f) {
    const auto t0 = std::chrono::steady_clock::now();
    f();
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void row(const char* name, double serial, double parallel, bool identical) {
    std::printf("%-28s %9.3fs %9.3fs  %5.2fx  %s\n", name, serial, parallel, serial / parallel,
                identical ? "bit-identical" : "MISMATCH");
}

} // namespace

int main() {
    std::printf("%-28s %10s %10s %7s\n", "kernel", "serial", "openmp", "speedup");

    {
        const Mat h = Mat::identity(3, 0.7);
        std::vector<biaslab::MomentReport> a, b;
        const double ts = time_s([&] { a = biaslab::moment_check(h, 10000000, 7, Exec::Serial); });
        const double tp = time_s([&] { b = biaslab::moment_check(h, 10000000, 7, Exec::Parallel); });
        bool same = true;
        for (size_t i = 0; i < a.size(); ++i) same = same && a[i].empirical == b[i].empirical;
        row("moment_check 1e7", ts, tp, same);
    }

    {
        const biaslab::Setup setup = biaslab::quadratic_setup(0.1, Mat::identity(2, 1.0));
        McEstimate a, b;
        const double ts = time_s(
            [&] { a = biaslab::mc_loss_estimate(biaslab::Kind::Em, setup, 1e-3, {}, 2000000, 3, Exec::Serial); });
        const double tp = time_s(
            [&] { b = biaslab::mc_loss_estimate(biaslab::Kind::Em, setup, 1e-3, {}, 2000000, 3, Exec::Parallel); });
        row("mc_loss_estimate em 2e6", ts, tp, a.mean == b.mean && a.std_error == b.std_error);
    }

    {
        const biaslab::Setup setup = biaslab::quadratic_setup(0.0, Mat::identity(2, 1.0));
        biaslab::MParams mp;
        mp.m = 1;
        mp.m1 = 1;
        mp.m2 = 2;
        biaslab::VarianceReport a, b;
        const double ts = time_s(
            [&] { a = biaslab::variance_ordering_estimate(setup, mp, 1e-4, 1e-4, 500000, 5, Exec::Serial); });
        const double tp = time_s(
            [&] { b = biaslab::variance_ordering_estimate(setup, mp, 1e-4, 1e-4, 500000, 5, Exec::Parallel); });
        row("variance_ordering 5e5", ts, tp, a.v_uem == b.v_uem && a.v_em == b.v_em);
    }

    {
        const PDEProblem p = make_problem("BSB", 10);
        MlpConfig cfg;
        cfg.input_dim = 11;
        cfg.width = 64;
        cfg.hidden_layers = 2;
        cfg.init_seed = 3;
        const Surrogate s = apply_hard_constraint(Surrogate::create(cfg), p);
        const RolloutBundle rb =
            rollout(p, uniform_grid(50, 1.0), {SchemeKind::MultiShot, 10, 0.0}, 32, nullptr, 9);
        LossSpec spec;
        spec.method = Method::UnEm;
        spec.m1 = 5;
        spec.m2 = 5;
        LossGrad a, b;
        const double ts = time_s([&] { a = total_loss_gradient(spec, s, p, rb, Exec::Serial); });
        const double tp = time_s([&] { b = total_loss_gradient(spec, s, p, rb, Exec::Parallel); });
        row("unem loss+grad B32 N50 d10", ts, tp, a.value == b.value && a.grad == b.grad);
    }

    {
        const PDEProblem p = make_problem("BSB", 10);
        MlpConfig cfg;
        cfg.input_dim = 11;
        cfg.width = 64;
        cfg.hidden_layers = 2;
        cfg.init_seed = 3;
        const Surrogate s = apply_hard_constraint(Surrogate::create(cfg), p);
        const RolloutBundle rb =
            rollout(p, uniform_grid(50, 1.0), {SchemeKind::Heun, 1, 0.0}, 8, nullptr, 9);
        LossSpec spec;
        spec.method = Method::Heun;
        LossGrad a, b;
        const double ts = time_s([&] { a = total_loss_gradient(spec, s, p, rb, Exec::Serial); });
        const double tp = time_s([&] { b = total_loss_gradient(spec, s, p, rb, Exec::Parallel); });
        row("heun loss+grad B8 N50 d10", ts, tp, a.value == b.value && a.grad == b.grad);
    }

    return 0;
}
