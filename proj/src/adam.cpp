#include "fbsde/adam.hpp"

#include <cmath>

namespace fbsde {

void adam_step(AdamState& state, Vec& params, const Vec& grads, double lr, const AdamConfig& cfg) {
    if (params.size() != grads.size() || state.m.size() != params.size() ||
        state.v.size() != params.size())
        throw std::invalid_argument("adam_step: shape mismatch");
    if (!all_finite(grads))
        throw std::runtime_error("adam_step: non-finite gradient, aborting the run");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (size_t i = 0; i < params.size(); ++i) {
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
        const double mhat = state.m[i] / bc1;
        const double vhat = state.v[i] / bc2;
        params[i] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
}

double lr_schedule(const Schedule& sched, long step, long total, double base) {
    if (step < 0 || step > total) throw std::invalid_argument("lr_schedule: step outside [0, total]");
    if (sched.kind == ScheduleKind::Cosine)
        return base * 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / static_cast<double>(total)));
    if (sched.factors.size() != sched.boundaries.size() + 1)
        throw std::invalid_argument("lr_schedule: piecewise needs boundaries.size()+1 factors");
    const double frac = static_cast<double>(step) / static_cast<double>(total);
    size_t idx = 0;
    while (idx < sched.boundaries.size() && frac >= sched.boundaries[idx]) ++idx;
    return base * sched.factors[idx];
}

} // namespace fbsde
