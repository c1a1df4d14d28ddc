#include "fbsde/surrogate.hpp"

#include <cstring>
#include <fstream>

namespace fbsde {

Surrogate apply_hard_constraint(const Surrogate& raw, const PDEProblem& problem) {
    if (raw.hard_constraint) throw std::invalid_argument("surrogate is already constrained");
    if (raw.spatial_dim() != problem.d)
        throw std::invalid_argument("surrogate/problem dimension mismatch");
    Surrogate s = raw;
    s.hard_constraint = true;
    s.constraint_problem = std::make_shared<PDEProblem>(problem);
    return s;
}

double eval_value(const Surrogate& s, double t, Span x) {
    return with_field_eval(s, nullptr, [&](auto& ev) { return ev.value(t, x); });
}

Vec eval_gradient(const Surrogate& s, double t, Span x) {
    Vec grad;
    with_field_eval(s, nullptr, [&](auto& ev) {
        double u = 0.0;
        ev.value_grad(t, x, u, nullptr, grad);
        return 0;
    });
    return grad;
}

double eval_weighted_laplacian(const Surrogate& s, double t, Span x, const Mat& sigma) {
    const int d = s.spatial_dim();
    if (sigma.rows != d || sigma.cols != d)
        throw std::invalid_argument("sigma must be d x d");
    return with_field_eval(s, nullptr, [&](auto& ev) {
        Vec col(static_cast<size_t>(d));
        double acc = 0.0;
        for (int j = 0; j < d; ++j) {
            for (int i = 0; i < d; ++i) col[static_cast<size_t>(i)] = sigma(i, j);
            acc += ev.dir2(t, x, col);
        }
        return acc;
    });
}

namespace {

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_f64(std::ostream& os, double v) { os.write(reinterpret_cast<const char*>(&v), 8); }
void put_str(std::ostream& os, const std::string& s) {
    put_u32(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}
uint32_t get_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 4);
    return v;
}
uint64_t get_u64(std::istream& is) {
    uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
double get_f64(std::istream& is) {
    double v = 0;
    is.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
std::string get_str(std::istream& is) {
    const uint32_t n = get_u32(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    return s;
}

constexpr uint32_t kMagic = 0x4e534246; // "FBSN"
constexpr uint32_t kVersion = 1;

} // namespace

void save_checkpoint(const Surrogate& s, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    put_u32(os, kMagic);
    put_u32(os, kVersion);
    put_u32(os, static_cast<uint32_t>(s.config.input_dim));
    put_u32(os, static_cast<uint32_t>(s.config.width));
    put_u32(os, static_cast<uint32_t>(s.config.hidden_layers));
    put_u32(os, s.config.activation == Activation::Mish ? 0u : 1u);
    put_u32(os, s.config.precision == Precision::F64 ? 64u : 32u);
    put_u64(os, s.config.init_seed);
    put_u32(os, s.hard_constraint ? 1u : 0u);
    if (s.hard_constraint) {
        const PDEProblem& p = *s.constraint_problem;
        put_str(os, p.name);
        put_u32(os, static_cast<uint32_t>(p.d));
        put_u32(os, static_cast<uint32_t>(p.params.size()));
        for (const auto& [k, v] : p.params) {
            put_str(os, k);
            put_f64(os, v);
        }
    }
    put_u64(os, s.theta.size());
    os.write(reinterpret_cast<const char*>(s.theta.data()),
             static_cast<std::streamsize>(s.theta.size() * sizeof(double)));
    if (!os) throw std::runtime_error("checkpoint write failed: " + path);
}

Surrogate load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    if (get_u32(is) != kMagic) throw std::runtime_error("not a checkpoint file: " + path);
    if (get_u32(is) != kVersion) throw std::runtime_error("unsupported checkpoint version");
    MlpConfig cfg;
    cfg.input_dim = static_cast<int>(get_u32(is));
    cfg.width = static_cast<int>(get_u32(is));
    cfg.hidden_layers = static_cast<int>(get_u32(is));
    cfg.activation = get_u32(is) == 0 ? Activation::Mish : Activation::LeakyRelu;
    cfg.precision = get_u32(is) == 64 ? Precision::F64 : Precision::F32;
    cfg.init_seed = get_u64(is);
    const bool hard = get_u32(is) == 1;
    std::string pname;
    int pd = 0;
    std::map<std::string, double> params;
    if (hard) {
        pname = get_str(is);
        pd = static_cast<int>(get_u32(is));
        const uint32_t n = get_u32(is);
        for (uint32_t i = 0; i < n; ++i) {
            std::string k = get_str(is);
            params[k] = get_f64(is);
        }
    }
    Surrogate s;
    s.config = cfg;
    s.theta.resize(get_u64(is));
    is.read(reinterpret_cast<char*>(s.theta.data()),
            static_cast<std::streamsize>(s.theta.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint truncated: " + path);
    if (s.theta.size() != static_cast<size_t>(param_count(cfg)))
        throw std::runtime_error("checkpoint parameter count mismatch");
    if (hard) {
        s.hard_constraint = true;
        s.constraint_problem = std::make_shared<PDEProblem>(make_problem(pname, pd, params));
    }
    s.sync();
    return s;
}

} // namespace fbsde
