#include "fbsde/grid.hpp"

#include "fbsde/rng.hpp"

namespace fbsde {

TimeGrid uniform_grid(int n_steps, double t_end) {
    if (n_steps < 1) throw std::invalid_argument("uniform_grid: n_steps must be >= 1");
    if (t_end <= 0.0) throw std::invalid_argument("uniform_grid: t_end must be positive");
    TimeGrid g;
    g.kind = TimeGrid::Kind::Uniform;
    g.n_steps = n_steps;
    const double dt = t_end / n_steps;
    g.t.resize(static_cast<size_t>(n_steps) + 1);
    g.dt.assign(static_cast<size_t>(n_steps), dt);
    for (int n = 0; n <= n_steps; ++n) g.t[static_cast<size_t>(n)] = n * dt;
    g.t.back() = t_end;
    return g;
}

TimeGrid shotgun_grid(int n_steps, double t_end, uint64_t seed) {
    if (n_steps < 2) throw std::invalid_argument("shotgun_grid: n_steps must be >= 2");
    if (t_end <= 0.0) throw std::invalid_argument("shotgun_grid: t_end must be positive");
    TimeGrid g;
    g.kind = TimeGrid::Kind::Shotgun;
    g.n_steps = n_steps;
    const double step = t_end / (n_steps - 1);
    CounterRng rng(seed, Stream::GridFirstStep);
    const double t1 = std::max(1e-8 * step, rng.next_uniform() * step);
    g.t.resize(static_cast<size_t>(n_steps) + 1);
    g.t[0] = 0.0;
    for (int n = 1; n < n_steps; ++n) g.t[static_cast<size_t>(n)] = t1 + (n - 1) * step;
    g.t[static_cast<size_t>(n_steps)] = t_end;
    g.dt.resize(static_cast<size_t>(n_steps));
    for (int n = 0; n < n_steps; ++n)
        g.dt[static_cast<size_t>(n)] = g.t[static_cast<size_t>(n) + 1] - g.t[static_cast<size_t>(n)];
    return g;
}

} // namespace fbsde
