#pragma once

#include <cstdint>

#include "fbsde/common.hpp"

namespace fbsde {

struct TimeGrid {
    enum class Kind { Uniform, Shotgun };
    Kind kind = Kind::Uniform;
    int n_steps = 0;
    Vec t;  // n_steps + 1 nodes, t[0] = 0, t[n_steps] = t_end
    Vec dt; // n_steps step sizes

    double t_end() const { return t.back(); }
};

TimeGrid uniform_grid(int n_steps, double t_end);

/// Randomized grid of the Shotgun construction: step = t_end/(n-1),
/// t1 ~ U(0, step) (floored at 1e-8*step), interior nodes shifted by t1.
TimeGrid shotgun_grid(int n_steps, double t_end, uint64_t seed);

} // namespace fbsde
