#pragma once

#include "fbsde/common.hpp"

namespace fbsde {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct AdamState {
    Vec m, v;
    long t = 0;

    void init(size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        t = 0;
    }
};

/// Standard bias-corrected Adam update. Non-finite gradients abort the run
/// loudly; silently skipping a bad step would corrupt the moment estimates.
void adam_step(AdamState& state, Vec& params, const Vec& grads, double lr,
               const AdamConfig& cfg = {});

enum class ScheduleKind { Cosine, Piecewise };

struct Schedule {
    ScheduleKind kind = ScheduleKind::Cosine;
    Vec boundaries; // piecewise: ascending fractions of the total step count
    Vec factors;    // piecewise: boundaries.size() + 1 multipliers
};

/// cosine: base/2 * (1 + cos(pi * step/total)); piecewise: base * factor of
/// the interval containing step/total.
double lr_schedule(const Schedule& sched, long step, long total, double base);

} // namespace fbsde
