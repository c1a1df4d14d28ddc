#include "fbsde/noise.hpp"

#include "fbsde/rng.hpp"

namespace fbsde {

NoiseBundle sample_noise(const NoiseLayout& layout, const TimeGrid& grid,
                         std::optional<double> fine_tau, const std::optional<JumpSpec>& jump_spec,
                         uint64_t seed, Exec exec) {
    if (layout.B < 1 || layout.N < 1 || layout.M < 1 || layout.d < 1)
        throw std::invalid_argument("sample_noise: all layout entries must be >= 1");
    if (layout.N != grid.n_steps) throw std::invalid_argument("sample_noise: layout/grid mismatch");

    NoiseBundle nb;
    nb.layout = layout;
    nb.seed = seed;
    const size_t total = static_cast<size_t>(layout.B) * layout.N * layout.M * layout.d;
    nb.dW.resize(total);
    if (fine_tau) {
        if (*fine_tau <= 0.0) throw std::invalid_argument("sample_noise: fine_tau must be positive");
        nb.has_fine = true;
        nb.fine_tau = *fine_tau;
        nb.fine_dw.resize(total);
    }
    if (jump_spec) {
        nb.has_jumps = true;
        nb.jumps.resize(static_cast<size_t>(layout.B) * layout.N);
    }

    const double fine_scale = fine_tau ? std::sqrt(*fine_tau) : 0.0;
    parallel_for(exec, layout.B, [&](int b) {
        for (int n = 0; n < layout.N; ++n) {
            const double scale = std::sqrt(grid.dt[static_cast<size_t>(n)]);
            for (int i = 0; i < layout.M; ++i) {
                CounterRng rng(seed, Stream::MainIncrement, static_cast<uint64_t>(b),
                               static_cast<uint64_t>(n), static_cast<uint64_t>(i));
                double* out = nb.dW.data() +
                              ((static_cast<size_t>(b) * layout.N + n) * layout.M + i) * layout.d;
                for (int k = 0; k < layout.d; ++k) out[k] = scale * rng.next_normal();
                if (nb.has_fine) {
                    CounterRng frng(seed, Stream::FineIncrement, static_cast<uint64_t>(b),
                                    static_cast<uint64_t>(n), static_cast<uint64_t>(i));
                    double* fout = nb.fine_dw.data() +
                                   ((static_cast<size_t>(b) * layout.N + n) * layout.M + i) * layout.d;
                    for (int k = 0; k < layout.d; ++k) fout[k] = fine_scale * frng.next_normal();
                }
            }
            if (nb.has_jumps) {
                const JumpSpec& js = *jump_spec;
                CounterRng crng(seed, Stream::JumpCount, static_cast<uint64_t>(b),
                                static_cast<uint64_t>(n));
                JumpRecord& rec = nb.jumps[static_cast<size_t>(b) * layout.N + n];
                rec.count = crng.next_poisson(js.lambda * grid.dt[static_cast<size_t>(n)]);
                rec.sizes.resize(static_cast<size_t>(rec.count));
                CounterRng srng(seed, Stream::JumpSize, static_cast<uint64_t>(b),
                                static_cast<uint64_t>(n));
                for (int k = 0; k < rec.count; ++k)
                    rec.sizes[static_cast<size_t>(k)] = js.mu_phi + js.sigma_phi * srng.next_normal();
            }
        }
    });
    return nb;
}

} // namespace fbsde
