#pragma once

#include <optional>
#include <span>

#include "fbsde/grid.hpp"
#include "fbsde/problems.hpp"

namespace fbsde {

struct JumpRecord {
    int count = 0;
    Vec sizes;
};

struct NoiseLayout {
    int B = 1;
    int N = 1;
    int M = 1; // total shots
    int d = 1;
};

/// All randomness consumed by one training iteration: Brownian increments per
/// (batch, step, shot), optional fine-step increments (Shotgun) and optional
/// jump records per (batch, step). Regeneration from the same seed is
/// bit-identical; no loss code ever samples.
struct NoiseBundle {
    NoiseLayout layout;
    uint64_t seed = 0;
    Vec dW; // variance dt_n per step
    bool has_fine = false;
    double fine_tau = 0.0;
    Vec fine_dw; // variance fine_tau
    bool has_jumps = false;
    std::vector<JumpRecord> jumps; // [b][n]

    std::span<const double> dw_at(int b, int n, int i) const {
        const size_t off =
            ((static_cast<size_t>(b) * layout.N + n) * layout.M + i) * layout.d;
        return {dW.data() + off, static_cast<size_t>(layout.d)};
    }
    std::span<const double> fine_at(int b, int n, int i) const {
        const size_t off =
            ((static_cast<size_t>(b) * layout.N + n) * layout.M + i) * layout.d;
        return {fine_dw.data() + off, static_cast<size_t>(layout.d)};
    }
    const JumpRecord& jump_at(int b, int n) const {
        return jumps[static_cast<size_t>(b) * layout.N + n];
    }
};

NoiseBundle sample_noise(const NoiseLayout& layout, const TimeGrid& grid,
                         std::optional<double> fine_tau, const std::optional<JumpSpec>& jump_spec,
                         uint64_t seed, Exec exec = Exec::Parallel);

} // namespace fbsde
