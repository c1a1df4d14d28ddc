#include "fbsde/losses.hpp"

#include <algorithm>

namespace fbsde {

using namespace loss_detail;

Method parse_method(const std::string& name) {
    if (name == "em") return Method::Em;
    if (name == "multishot_em") return Method::MultiShotEm;
    if (name == "shotgun") return Method::Shotgun;
    if (name == "heun") return Method::Heun;
    if (name == "unem") return Method::UnEm;
    if (name == "unshotgun") return Method::UnShotgun;
    if (name == "fspinns") return Method::FsPinns;
    throw std::invalid_argument("unknown method '" + name +
                                "' (em, multishot_em, shotgun, heun, unem, unshotgun, fspinns)");
}

const char* method_name(Method m) {
    switch (m) {
    case Method::Em: return "em";
    case Method::MultiShotEm: return "multishot_em";
    case Method::Shotgun: return "shotgun";
    case Method::Heun: return "heun";
    case Method::UnEm: return "unem";
    case Method::UnShotgun: return "unshotgun";
    case Method::FsPinns: return "fspinns";
    }
    return "?";
}

void LossSpec::validate() const {
    if (m < 1 || m1 < 1 || m2 < 1) throw std::invalid_argument("shot counts must be >= 1");
    if (uses_fine_step() && tau <= 0.0) throw std::invalid_argument("tau must be positive");
    if (lambda_t < 0.0) throw std::invalid_argument("lambda_t must be >= 0");
}

int LossSpec::total_shots() const {
    switch (method) {
    case Method::Em:
    case Method::Heun:
    case Method::FsPinns: return 1;
    case Method::MultiShotEm:
    case Method::Shotgun: return m;
    case Method::UnEm:
    case Method::UnShotgun: return m1 + m2;
    }
    return 1;
}

SchemeKind LossSpec::scheme(const PDEProblem& p) const {
    const bool jumps = p.jump_spec.has_value();
    switch (method) {
    case Method::FsPinns:
        if (jumps)
            throw std::invalid_argument("fspinns is not defined for jump problems "
                                        "(the residual's nonlocal term has no closed form)");
        return SchemeKind::EM;
    case Method::Em: return jumps ? SchemeKind::Pide : SchemeKind::EM;
    case Method::MultiShotEm:
    case Method::UnEm: return jumps ? SchemeKind::Pide : SchemeKind::MultiShot;
    case Method::Shotgun:
    case Method::UnShotgun:
        if (jumps)
            throw std::invalid_argument(std::string(method_name(method)) +
                                        " is not defined for jump problems");
        return SchemeKind::Shotgun;
    case Method::Heun:
        if (jumps)
            throw std::invalid_argument("heun is not defined for jump problems");
        return SchemeKind::Heun;
    }
    return SchemeKind::EM;
}

double shot_average(Span errors) {
    if (errors.empty()) throw std::invalid_argument("shot_average: empty input");
    double acc = 0.0;
    for (double e : errors) acc += e;
    return acc / static_cast<double>(errors.size());
}

namespace {

enum class Family { EmLike, ShotgunLike, Heun, FsPinns, Terminal };

void check_bundle(Family fam, const PDEProblem& p, const RolloutBundle& rb, int nshots) {
    switch (fam) {
    case Family::EmLike:
        if (rb.spec.kind != SchemeKind::EM && rb.spec.kind != SchemeKind::MultiShot &&
            rb.spec.kind != SchemeKind::Pide)
            throw std::invalid_argument("bundle scheme does not carry EM candidate states");
        if (nshots > 1 && !rb.has_candidates)
            throw std::invalid_argument("bundle has no candidate shots");
        if (nshots > rb.spec.m_total)
            throw std::invalid_argument("bundle has fewer candidate shots than requested");
        break;
    case Family::ShotgunLike:
        if (rb.spec.kind != SchemeKind::Shotgun || !rb.has_antithetic)
            throw std::invalid_argument("bundle lacks antithetic shotgun states");
        if (nshots > rb.spec.m_total)
            throw std::invalid_argument("bundle has fewer fine shots than requested");
        break;
    case Family::Heun:
        if (rb.spec.kind != SchemeKind::Heun || !rb.has_bar)
            throw std::invalid_argument("bundle lacks Heun predictor states");
        if (!p.has_sigma_jacobian)
            throw std::invalid_argument(p.name + ": Heun loss needs sigma_jacobian");
        break;
    case Family::FsPinns:
        if (p.jump_spec)
            throw std::invalid_argument("fspinns is not defined for jump problems");
        break;
    case Family::Terminal: break;
    }
}

/// Per-element dispatch; the per-element value is the raw sum over steps.
template <class Ev>
typename Ev::scalar element_method(Ev& ev, const LossSpec& spec, const PDEProblem& p,
                                   const RolloutBundle& rb, int b,
                                   ElemScratch<typename Ev::scalar>& sc) {
    switch (spec.method) {
    case Method::Em: return element_em_family(ev, p, rb, b, 1, 0, sc);
    case Method::MultiShotEm: return element_em_family(ev, p, rb, b, spec.m, 0, sc);
    case Method::UnEm: return element_em_family(ev, p, rb, b, spec.m1, spec.m2, sc);
    case Method::Shotgun: return element_shotgun_family(ev, p, rb, b, spec.m, 0, sc);
    case Method::UnShotgun: return element_shotgun_family(ev, p, rb, b, spec.m1, spec.m2, sc);
    case Method::Heun: return element_heun(ev, p, rb, b, sc);
    case Method::FsPinns: return element_fspinns(ev, p, rb, b, sc);
    }
    throw std::logic_error("unreachable");
}

Family family_of(Method m) {
    switch (m) {
    case Method::Em:
    case Method::MultiShotEm:
    case Method::UnEm: return Family::EmLike;
    case Method::Shotgun:
    case Method::UnShotgun: return Family::ShotgunLike;
    case Method::Heun: return Family::Heun;
    case Method::FsPinns: return Family::FsPinns;
    }
    return Family::EmLike;
}

double method_scale(const LossSpec& spec, const RolloutBundle& rb) {
    const double inv_b = 1.0 / static_cast<double>(rb.B);
    if (spec.method == Method::FsPinns) return inv_b / static_cast<double>(rb.grid.n_steps);
    return inv_b;
}

/// Value-path driver over any double-scalar evaluator factory.
template <class MakeEv>
double value_driver(const LossSpec& spec, const PDEProblem& p, const RolloutBundle& rb, Exec exec,
                    EvalStats* agg, MakeEv make_ev) {
    spec.validate();
    check_bundle(family_of(spec.method), p, rb, spec.total_shots());
    const int B = rb.B;
    std::vector<double> vals(static_cast<size_t>(B), 0.0);
    std::vector<EvalStats> stats(static_cast<size_t>(agg ? B : 0));
    parallel_for(exec, B, [&](int b) {
        ElemScratch<double> sc;
        auto run = [&](auto& ev) { vals[static_cast<size_t>(b)] = element_method(ev, spec, p, rb, b, sc); };
        make_ev(agg ? &stats[static_cast<size_t>(b)] : nullptr, run);
    });
    double total = 0.0;
    for (int b = 0; b < B; ++b) total += vals[static_cast<size_t>(b)];
    if (agg)
        for (int b = 0; b < B; ++b) {
            agg->value_evals += stats[static_cast<size_t>(b)].value_evals;
            agg->grad_evals += stats[static_cast<size_t>(b)].grad_evals;
            agg->dir2_evals += stats[static_cast<size_t>(b)].dir2_evals;
            agg->laplacian_evals += stats[static_cast<size_t>(b)].laplacian_evals;
        }
    return total * method_scale(spec, rb);
}

double surrogate_loss(const LossSpec& spec, const Surrogate& s, const PDEProblem& p,
                      const RolloutBundle& rb, Exec exec, EvalStats* stats) {
    return value_driver(spec, p, rb, exec, stats, [&](EvalStats* st, auto run) {
        with_field_eval(s, st, [&](auto& ev) {
            run(ev);
            return 0;
        });
    });
}

LossSpec single_method(Method m) {
    LossSpec spec;
    spec.method = m;
    spec.soft = false;
    return spec;
}

} // namespace

double loss_em(const Surrogate& s, const PDEProblem& p, const RolloutBundle& rb, Exec exec) {
    return surrogate_loss(single_method(Method::Em), s, p, rb, exec, nullptr);
}

double loss_multishot_em(const Surrogate& s, const PDEProblem& p, const RolloutBundle& rb, int m,
                         Exec exec) {
    LossSpec spec = single_method(Method::MultiShotEm);
    spec.m = m;
    return surrogate_loss(spec, s, p, rb, exec, nullptr);
}

double loss_shotgun(const Surrogate& s, const PDEProblem& p, const RolloutBundle& rb, int m,
                    double tau, Exec exec) {
    LossSpec spec = single_method(Method::Shotgun);
    spec.m = m;
    spec.tau = tau;
    if (std::abs(tau - rb.spec.tau) > 0.0)
        throw std::invalid_argument("tau does not match the bundle's fine step");
    return surrogate_loss(spec, s, p, rb, exec, nullptr);
}

double loss_heun(const Surrogate& s, const PDEProblem& p, const RolloutBundle& rb, Exec exec,
                 EvalStats* stats) {
    return surrogate_loss(single_method(Method::Heun), s, p, rb, exec, stats);
}

double loss_unem(const Surrogate& s, const PDEProblem& p, const RolloutBundle& rb, int m1, int m2,
                 Exec exec) {
    LossSpec spec = single_method(Method::UnEm);
    spec.m1 = m1;
    spec.m2 = m2;
    return surrogate_loss(spec, s, p, rb, exec, nullptr);
}

double loss_unshotgun(const Surrogate& s, const PDEProblem& p, const RolloutBundle& rb, int m1,
                      int m2, double tau, Exec exec) {
    LossSpec spec = single_method(Method::UnShotgun);
    spec.m1 = m1;
    spec.m2 = m2;
    spec.tau = tau;
    if (std::abs(tau - rb.spec.tau) > 0.0)
        throw std::invalid_argument("tau does not match the bundle's fine step");
    return surrogate_loss(spec, s, p, rb, exec, nullptr);
}

double loss_fs_pinns(const Surrogate& s, const PDEProblem& p, const RolloutBundle& rb, Exec exec) {
    return surrogate_loss(single_method(Method::FsPinns), s, p, rb, exec, nullptr);
}

double loss_terminal(const Surrogate& s, const PDEProblem& p, const RolloutBundle& rb, Exec exec) {
    if (s.hard_constraint)
        throw std::logic_error("terminal loss under a hard constraint is identically zero; "
                               "this call is a configuration error");
    const int B = rb.B;
    std::vector<double> vals(static_cast<size_t>(B), 0.0);
    parallel_for(exec, B, [&](int b) {
        ElemScratch<double> sc;
        with_field_eval(s, nullptr, [&](auto& ev) {
            vals[static_cast<size_t>(b)] = element_terminal(ev, p, rb, b, sc);
            return 0;
        });
    });
    double total = 0.0;
    for (int b = 0; b < B; ++b) total += vals[static_cast<size_t>(b)];
    return total / static_cast<double>(B);
}

double total_loss(const LossSpec& spec, const Surrogate& s, const PDEProblem& p,
                  const RolloutBundle& rb, Exec exec) {
    double loss = surrogate_loss(spec, s, p, rb, exec, nullptr);
    if (spec.soft) loss += spec.lambda_t * loss_terminal(s, p, rb, exec);
    return loss;
}

double loss_value_analytic(const LossSpec& spec, AnalyticField& field, const PDEProblem& p,
                           const RolloutBundle& rb, Exec exec) {
    return value_driver(spec, p, rb, exec, nullptr, [&](EvalStats*, auto run) { run(field); });
}

StepErrors compute_step_errors(const Surrogate& s, const PDEProblem& p, const RolloutBundle& rb,
                               int m1, int m2, Exec exec) {
    LossSpec spec = single_method(m2 > 0 ? Method::UnEm : Method::MultiShotEm);
    spec.m1 = std::max(1, m1);
    spec.m2 = std::max(1, m2);
    spec.m = m1;
    spec.validate();
    check_bundle(Family::EmLike, p, rb, m1 + m2);
    StepErrors se;
    se.B = rb.B;
    se.N = rb.grid.n_steps;
    se.M = m1 + m2;
    se.err.assign(static_cast<size_t>(se.B) * se.N * se.M, 0.0);
    se.group1.assign(static_cast<size_t>(se.B) * se.N, 0.0);
    se.group2.assign(static_cast<size_t>(se.B) * se.N, 0.0);
    parallel_for(exec, rb.B, [&](int b) {
        ElemScratch<double> sc;
        with_field_eval(s, nullptr, [&](auto& ev) {
            for (int n = 0; n < se.N; ++n) {
                const double t = rb.grid.t[static_cast<size_t>(n)];
                const double t1 = rb.grid.t[static_cast<size_t>(n) + 1];
                const double dt = rb.grid.dt[static_cast<size_t>(n)];
                const Span x = rb.main_at(b, n);
                double y = 0.0;
                ev.value_grad(t, x, y, nullptr, sc.z);
                const double phi = phi_of(p, t, x, y, sc.z);
                zsig_row(p, t, x, y, sc.z, sc.zs, sc);
                double jterm = 0.0;
                if (rb.spec.kind == SchemeKind::Pide) {
                    const JumpRecord& jr = rb.noise.jump_at(b, n);
                    const JumpSpec& js = *p.jump_spec;
                    double zsum = 0.0;
                    for (double zz : sc.z) zsum += zz;
                    jterm = -js.lambda * js.mu_phi * dt * zsum;
                    for (int k = 0; k < jr.count; ++k) {
                        sc.xtmp.assign(x.begin(), x.end());
                        for (double& v : sc.xtmp) v += jr.sizes[static_cast<size_t>(k)];
                        jterm += ev.value(t, sc.xtmp) - y;
                    }
                }
                double sum1 = 0.0, sum2 = 0.0;
                for (int i = 0; i < se.M; ++i) {
                    const Span xn =
                        rb.has_candidates ? rb.cand_at(b, n + 1, i) : rb.main_at(b, n + 1);
                    const double e = em_error_from_base(ev, t1, xn, y, phi, sc.zs, dt,
                                                        rb.noise.dw_at(b, n, i)) -
                                     jterm;
                    se.err[(static_cast<size_t>(b) * se.N + n) * se.M + i] = e;
                    if (i < m1)
                        sum1 += e;
                    else
                        sum2 += e;
                }
                se.group1[static_cast<size_t>(b) * se.N + n] = sum1 / m1;
                if (m2 > 0) se.group2[static_cast<size_t>(b) * se.N + n] = sum2 / m2;
            }
            return 0;
        });
    });
    return se;
}

namespace {

template <class Real>
LossGrad gradient_driver(const LossSpec& spec, const Surrogate& s, const PDEProblem& p,
                         const RolloutBundle& rb, Exec exec) {
    const int B = rb.B;
    const int P = param_count(s.config);
    const double mscale = method_scale(spec, rb);
    LossGrad out;
    out.grad.assign(static_cast<size_t>(P), 0.0);

    // fixed block structure: contexts, tapes and scratch persist across
    // blocks, and the reduction runs in element order regardless of threads
    const int block = std::min(B, 16);
    struct Slot {
        ad::Tape tape;
        Vec grad;
        EvalStats stats;
        double val = 0.0;
        std::unique_ptr<TapeEvalT<Real>> ev;
        ElemScratch<ad::Var> sc;
    };
    std::vector<Slot> slots(static_cast<size_t>(block));
    for (Slot& sl : slots) {
        sl.grad.assign(static_cast<size_t>(P), 0.0);
        sl.ev = std::make_unique<TapeEvalT<Real>>(sl.tape, s, sl.grad, &sl.stats);
    }

    for (int base = 0; base < B; base += block) {
        const int count = std::min(block, B - base);
        parallel_for(exec, count, [&](int k) {
            Slot& sl = slots[static_cast<size_t>(k)];
            const int b = base + k;
            sl.grad.assign(static_cast<size_t>(P), 0.0);
            sl.tape.clear();
            sl.ev->reset();
            ad::Var lb = element_method(*sl.ev, spec, p, rb, b, sl.sc) * mscale;
            if (spec.soft)
                lb = lb + element_terminal(*sl.ev, p, rb, b, sl.sc) *
                              (spec.lambda_t / static_cast<double>(B));
            sl.val = lb.v;
            sl.tape.backward(lb.id);
            sl.ev->flush(sl.tape);
        });
        for (int k = 0; k < count; ++k) {
            Slot& sl = slots[static_cast<size_t>(k)];
            out.value += sl.val;
            for (int i = 0; i < P; ++i)
                out.grad[static_cast<size_t>(i)] += sl.grad[static_cast<size_t>(i)];
        }
    }
    for (const Slot& sl : slots) {
        out.stats.value_evals += sl.stats.value_evals;
        out.stats.grad_evals += sl.stats.grad_evals;
        out.stats.dir2_evals += sl.stats.dir2_evals;
        out.stats.laplacian_evals += sl.stats.laplacian_evals;
    }
    return out;
}

} // namespace

LossGrad total_loss_gradient(const LossSpec& spec, const Surrogate& s, const PDEProblem& p,
                             const RolloutBundle& rb, Exec exec) {
    spec.validate();
    check_bundle(family_of(spec.method), p, rb, spec.total_shots());
    if (spec.soft && s.hard_constraint)
        throw std::logic_error("soft-constraint loss configured on a hard-constrained surrogate");
    if (s.config.precision == Precision::F64) return gradient_driver<double>(spec, s, p, rb, exec);
    return gradient_driver<float>(spec, s, p, rb, exec);
}

} // namespace fbsde
