#include "fbsde/training.hpp"

#include <chrono>

#include "fbsde/rng.hpp"

namespace fbsde {

EvalSet generate_reference_trajectories(const PDEProblem& p, int count, const TimeGrid& grid,
                                        uint64_t seed, long hjb_mc_samples, Exec exec) {
    const bool is_hjb = p.name == "HJB";
    const bool is_ac = p.name == "AC";
    if (!p.has_exact && !is_hjb && !is_ac)
        throw std::invalid_argument(p.name + ": no reference solution available");
    if (is_ac && !p.reference_u0)
        throw std::invalid_argument(
            "AC has a reference value only at its default dimension and horizon");

    EvalSet ev;
    ev.d = p.d;

    if (is_ac) {
        // only the t = 0 point carries a reference
        ev.grid = uniform_grid(1, p.t_end);
        ev.grid.t = {0.0, p.t_end};
        ev.count = 1;
        ev.only_t0 = true;
        ev.states.assign(p.x0.begin(), p.x0.end());
        ev.states.insert(ev.states.end(), p.x0.begin(), p.x0.end());
        ev.refs = {*p.reference_u0, *p.reference_u0};
        ev.grid.n_steps = 1;
        return ev;
    }

    ev.grid = grid;
    ev.count = count;
    const int N = grid.n_steps;
    const int d = p.d;
    ev.states.assign(static_cast<size_t>(count) * (N + 1) * d, 0.0);
    ev.refs.assign(static_cast<size_t>(count) * (N + 1), 0.0);

    const NoiseBundle noise =
        sample_noise({count, N, 1, d}, grid, {}, p.jump_spec, seed ^ 0x5eedull, exec);

    parallel_for(exec, count, [&](int i) {
        Vec x = p.x0;
        Vec xn;
        for (int n = 0; n <= N; ++n) {
            double* dst = ev.states.data() + (static_cast<size_t>(i) * (N + 1) + n) * d;
            for (int k = 0; k < d; ++k) dst[k] = x[static_cast<size_t>(k)];
            if (p.has_exact)
                ev.refs[static_cast<size_t>(i) * (N + 1) + n] = p.exact(grid.t[static_cast<size_t>(n)], x);
            if (n == N) break;
            const double t = grid.t[static_cast<size_t>(n)];
            const double dt = grid.dt[static_cast<size_t>(n)];
            if (p.jump_spec) {
                jump_forward_step(p, t, x, dt, noise.dw_at(i, n, 0), noise.jump_at(i, n), xn);
            } else if (p.coupled) {
                // the exact solution drives the coupled diffusion
                em_forward_step(p, t, x, dt, noise.dw_at(i, n, 0), p.exact(t, x), xn);
            } else {
                em_forward_step(p, t, x, dt, noise.dw_at(i, n, 0), {}, xn);
            }
            x = xn;
        }
    });

    if (is_hjb) {
        // one MC reference per node, derived seeds, deterministic
        parallel_for(exec, count, [&](int i) {
            for (int n = 0; n <= N; ++n) {
                const McEstimate est =
                    hjb_reference_mc(p, ev.state_at(i, n), ev.grid.t[static_cast<size_t>(n)],
                                     hjb_mc_samples,
                                     seed + 0x9e37ull * static_cast<uint64_t>(i * (N + 1) + n),
                                     Exec::Serial);
                ev.refs[static_cast<size_t>(i) * (N + 1) + n] = est.mean;
            }
        });
    }
    return ev;
}

double rl2(const Surrogate& s, const EvalSet& eval) {
    if (eval.count < 1) throw std::invalid_argument("rl2: empty evaluation set");
    return with_field_eval(s, nullptr, [&](auto& ev) {
        double acc = 0.0;
        const int last_node = eval.only_t0 ? 0 : eval.grid.n_steps;
        for (int i = 0; i < eval.count; ++i) {
            double num = 0.0, den = 0.0;
            for (int n = 0; n <= last_node; ++n) {
                const double ref = eval.ref_at(i, n);
                const double got = ev.value(eval.grid.t[static_cast<size_t>(n)], eval.state_at(i, n));
                num += (ref - got) * (ref - got);
                den += ref * ref;
            }
            if (den == 0.0) throw std::invalid_argument("rl2: reference values are all zero");
            acc += std::sqrt(num / den);
        }
        return acc / eval.count;
    });
}

TrainResult train(const PDEProblem& p, const TrainConfig& cfg_in, Exec exec) {
    TrainConfig cfg = cfg_in;
    cfg.network.input_dim = p.d + 1;
    cfg.validate();
    if (cfg.loss.method == Method::Heun && !p.has_sigma_jacobian)
        throw std::invalid_argument(p.name + ": heun needs sigma Jacobians");
    cfg.loss.scheme(p); // throws on incompatible method/problem pairs

    Surrogate s = Surrogate::create(cfg.network);
    if (!cfg.loss.soft) s = apply_hard_constraint(s, p);

    RunRecord rec;
    rec.problem_name = p.name;
    rec.problem_dim = p.d;
    rec.config = cfg;
    rec.eval_seed = CounterRng(cfg.seed, Stream::EvalNoise).next_u64();

    const bool can_eval = p.has_exact || p.name == "HJB" || (p.name == "AC" && p.reference_u0);
    EvalSet eval;
    if (can_eval)
        eval = generate_reference_trajectories(p, cfg.n_eval_trajectories,
                                               uniform_grid(cfg.n_steps, p.t_end), rec.eval_seed,
                                               cfg.hjb_mc_samples, exec);

    const SchemeKind scheme = cfg.loss.scheme(p);
    const RolloutSpec rspec{scheme, cfg.loss.total_shots(), cfg.loss.tau};
    AdamState adam;
    adam.init(s.theta.size());

    TrainResult out{std::move(s), std::move(rec)};
    Surrogate& surr = out.surrogate;
    RunRecord& record = out.record;

    const auto t_start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    };

    for (long it = 0; it < cfg.iterations; ++it) {
        try {
            const uint64_t iter_seed =
                CounterRng(cfg.seed, Stream::TrainIter, static_cast<uint64_t>(it)).next_u64();
            const TimeGrid grid = scheme == SchemeKind::Shotgun
                                      ? shotgun_grid(cfg.n_steps, p.t_end, iter_seed)
                                      : uniform_grid(cfg.n_steps, p.t_end);
            const RolloutBundle rb =
                rollout(p, grid, rspec, cfg.batch_size, p.coupled ? &surr : nullptr, iter_seed, exec);
            LossGrad lg = total_loss_gradient(cfg.loss, surr, p, rb, exec);
            if (!std::isfinite(lg.value))
                throw std::runtime_error("non-finite loss value");
            if (cfg.grad_clip > 0.0) {
                const double norm = std::sqrt(norm2sq(lg.grad));
                if (norm > cfg.grad_clip)
                    for (double& g : lg.grad) g *= cfg.grad_clip / norm;
            }
            const double lr = lr_schedule(cfg.schedule, it, cfg.iterations, cfg.lr);
            if (it % cfg.eval_every == 0) {
                LogEntry e;
                e.iteration = it;
                e.loss = lg.value;
                e.lr = lr;
                e.wall_seconds = elapsed();
                if (can_eval) e.rl2 = rl2(surr, eval);
                record.log.push_back(e);
            }
            adam_step(adam, surr.theta, lg.grad, lr, cfg.adam);
            surr.sync();
        } catch (const std::exception& ex) {
            record.aborted = true;
            record.abort_iteration = it;
            record.abort_reason = ex.what();
            return out;
        }
    }

    LogEntry final_entry;
    final_entry.iteration = cfg.iterations;
    final_entry.loss = record.log.empty() ? 0.0 : record.log.back().loss;
    final_entry.lr = cfg.iterations > 0
                         ? lr_schedule(cfg.schedule, cfg.iterations, cfg.iterations, cfg.lr)
                         : cfg.lr;
    final_entry.wall_seconds = elapsed();
    if (can_eval) final_entry.rl2 = rl2(surr, eval);
    record.log.push_back(final_entry);
    return out;
}

} // namespace fbsde
