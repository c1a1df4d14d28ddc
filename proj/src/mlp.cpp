#include "fbsde/mlp.hpp"

#include "fbsde/rng.hpp"

namespace fbsde {

int param_count(const MlpConfig& cfg) {
    int total = 0;
    for (int l = 0; l < cfg.hidden_layers; ++l) {
        const int in = l == 0 ? cfg.input_dim : cfg.width;
        total += cfg.width * in + cfg.width;
    }
    return total + cfg.width + 1;
}

Vec init_params(const MlpConfig& cfg) {
    if (cfg.width < 1 || cfg.hidden_layers < 1 || cfg.input_dim < 2)
        throw std::invalid_argument("network needs width >= 1, hidden_layers >= 1, input_dim >= 2");
    Vec theta(static_cast<size_t>(param_count(cfg)), 0.0);
    size_t off = 0;
    for (int l = 0; l < cfg.hidden_layers; ++l) {
        const int in = l == 0 ? cfg.input_dim : cfg.width;
        const double limit = std::sqrt(6.0 / static_cast<double>(in + cfg.width));
        CounterRng rng(cfg.init_seed, Stream::ParamInit, static_cast<uint64_t>(l));
        for (int k = 0; k < cfg.width * in; ++k)
            theta[off + static_cast<size_t>(k)] = limit * (2.0 * rng.next_uniform() - 1.0);
        off += static_cast<size_t>(cfg.width * in) + static_cast<size_t>(cfg.width); // biases stay zero
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(cfg.width + 1));
    CounterRng rng(cfg.init_seed, Stream::ParamInit, static_cast<uint64_t>(cfg.hidden_layers));
    for (int k = 0; k < cfg.width; ++k) theta[off + static_cast<size_t>(k)] = limit * (2.0 * rng.next_uniform() - 1.0);
    return theta;
}

} // namespace fbsde
