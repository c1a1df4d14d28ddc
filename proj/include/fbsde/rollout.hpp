#pragma once

#include "fbsde/noise.hpp"
#include "fbsde/surrogate.hpp"

namespace fbsde {

enum class SchemeKind { EM, Heun, Shotgun, MultiShot, Pide };

struct RolloutSpec {
    SchemeKind kind = SchemeKind::EM;
    int m_total = 1;   // candidate / fine shots per step
    double tau = 0.0;  // fine step (Shotgun)
};

/// Forward trajectory states plus everything the scheme-specific losses read:
/// candidate next states (Multi-Shot / Un-EM), antithetic fine-step pairs
/// (Shotgun), Heun predictor states, and the full noise record. The main path
/// advances along shot index 0.
struct RolloutBundle {
    TimeGrid grid;
    int B = 0;
    int d = 0;
    RolloutSpec spec;
    NoiseBundle noise;

    Vec x_main; // [b][n in 0..N][k]
    bool has_candidates = false;
    Vec x_candidates; // [b][n in 0..N][i][k]
    bool has_antithetic = false;
    Vec x_plus, x_minus; // [b][n in 0..N-1][i][k]
    bool has_bar = false;
    Vec x_heun_bar; // [b][n in 0..N][k]; slot n holds the predictor for step n-1

    std::span<const double> main_at(int b, int n) const {
        const size_t off = (static_cast<size_t>(b) * (grid.n_steps + 1) + n) * d;
        return {x_main.data() + off, static_cast<size_t>(d)};
    }
    std::span<const double> cand_at(int b, int n, int i) const {
        const size_t off =
            ((static_cast<size_t>(b) * (grid.n_steps + 1) + n) * spec.m_total + i) * d;
        return {x_candidates.data() + off, static_cast<size_t>(d)};
    }
    std::span<const double> plus_at(int b, int n, int i) const {
        const size_t off = ((static_cast<size_t>(b) * grid.n_steps + n) * spec.m_total + i) * d;
        return {x_plus.data() + off, static_cast<size_t>(d)};
    }
    std::span<const double> minus_at(int b, int n, int i) const {
        const size_t off = ((static_cast<size_t>(b) * grid.n_steps + n) * spec.m_total + i) * d;
        return {x_minus.data() + off, static_cast<size_t>(d)};
    }
    std::span<const double> bar_at(int b, int n) const {
        const size_t off = (static_cast<size_t>(b) * (grid.n_steps + 1) + n) * d;
        return {x_heun_bar.data() + off, static_cast<size_t>(d)};
    }
};

void em_forward_step(const PDEProblem& p, double t, Span x, double dt, Span dW,
                     std::optional<double> y_opt, Vec& out);

/// Surrogate value and gradient at a point; threaded into the coupled Heun
/// corrections.
using YzEval = std::function<void(double t, Span x, double& y, Vec& z)>;

void heun_forward_step(const PDEProblem& p, double t, Span x, double dt, Span dW,
                       const YzEval* yz, Vec& x_bar, Vec& x_next);

/// Discrete PIDE forward update: EM part plus scalar jumps broadcast to every
/// coordinate and the drift compensator.
void jump_forward_step(const PDEProblem& p, double t, Span x, double dt, Span dW,
                       const JumpRecord& jumps, Vec& out);

RolloutBundle rollout(const PDEProblem& p, const TimeGrid& grid, const RolloutSpec& spec, int B,
                      const Surrogate* surrogate, uint64_t seed, Exec exec = Exec::Parallel);

} // namespace fbsde
