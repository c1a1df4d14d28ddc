#pragma once

#include "fbsde/adam.hpp"
#include "fbsde/losses.hpp"

namespace fbsde {

struct TrainConfig {
    long iterations = 2000;
    int batch_size = 64;
    double lr = 1e-3;
    Schedule schedule;
    AdamConfig adam;
    uint64_t seed = 1;
    long eval_every = 100;
    int n_eval_trajectories = 16;
    int n_steps = 50;          // uniform grid steps (also the shotgun N)
    long hjb_mc_samples = 100000;
    double grad_clip = 0.0;    // global-norm clip, 0 disables
    LossSpec loss;
    MlpConfig network;         // input_dim is overwritten from the problem

    void validate() const {
        if (iterations < 0) throw std::invalid_argument("iterations must be >= 0");
        if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
        if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
        if (n_steps < 1) throw std::invalid_argument("n_steps must be >= 1");
        if (lr <= 0.0) throw std::invalid_argument("lr must be positive");
        loss.validate();
    }
};

struct LogEntry {
    long iteration = 0;
    double wall_seconds = 0.0;
    double loss = 0.0;
    double lr = 0.0;
    double rl2 = std::numeric_limits<double>::quiet_NaN(); // NaN when not evaluated
};

struct RunRecord {
    std::string problem_name;
    int problem_dim = 0;
    TrainConfig config;
    uint64_t eval_seed = 0; // tags every RL2 entry
    std::vector<LogEntry> log;
    bool aborted = false;
    long abort_iteration = -1;
    std::string abort_reason;
};

/// Evaluation set: forward trajectories with reference solution values. For
/// AC only the initial point carries a reference, so the set degenerates to
/// the single pair (0, x0, reference_u0).
struct EvalSet {
    TimeGrid grid;
    int count = 0;
    int d = 0;
    bool only_t0 = false;
    Vec states; // [traj][node][k]
    Vec refs;   // [traj][node]

    Span state_at(int i, int n) const {
        return {states.data() + (static_cast<size_t>(i) * (grid.n_steps + 1) + n) * d,
                static_cast<size_t>(d)};
    }
    double ref_at(int i, int n) const {
        return refs[static_cast<size_t>(i) * (grid.n_steps + 1) + n];
    }
};

/// Forward EM paths with independent evaluation noise; reference values from
/// the closed form, the HJB Monte Carlo estimator, or (AC) the t = 0
/// reference only. Coupled problems advance with the exact solution value.
EvalSet generate_reference_trajectories(const PDEProblem& p, int count, const TimeGrid& grid,
                                        uint64_t seed, long hjb_mc_samples = 100000,
                                        Exec exec = Exec::Parallel);

/// Average over trajectories of sqrt(sum_n |u - u_theta|^2 / sum_n |u|^2).
double rl2(const Surrogate& s, const EvalSet& eval);

struct TrainResult {
    Surrogate surrogate;
    RunRecord record;
};

TrainResult train(const PDEProblem& p, const TrainConfig& cfg, Exec exec = Exec::Parallel);

} // namespace fbsde
