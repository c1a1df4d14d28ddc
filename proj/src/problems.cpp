#include "fbsde/problems.hpp"

#include <algorithm>
#include <cmath>

#include "fbsde/rng.hpp"

namespace fbsde {

namespace {

template <class SV>
auto dot_sd(const SV& z, Span x) {
    auto s = z[0] * x[0];
    for (size_t j = 1; j < x.size(); ++j) s = s + z[j] * x[j];
    return s;
}

template <class F>
void set_phi(PDEProblem& p, F f) {
    p.phi = [f](double t, Span x, const double& y, const std::vector<double>& z) {
        return f(t, x, y, z);
    };
    p.phi_var = [f](double t, Span x, const ad::Var& y, const std::vector<ad::Var>& z) {
        return f(t, x, y, z);
    };
}

void set_constant_diag_sigma(PDEProblem& p, double scale) {
    p.sigma0_diagonal = true;
    p.sigma0_diag = [scale](double, Span x, Vec& out) { out.assign(x.size(), scale); };
    p.sigma0_dense = [scale](double, Span x, Mat& out) {
        out = Mat::identity(static_cast<int>(x.size()), scale);
    };
}

void set_zero_jacobian(PDEProblem& p) {
    p.has_sigma_jacobian = true;
    p.sigma_jacobian = [d = p.d](double, Span, const double*, const Vec*, std::vector<Mat>& out) {
        out.assign(static_cast<size_t>(d), Mat(d, d));
    };
}

void set_zero_mu(PDEProblem& p) {
    p.mu_is_zero = true;
    p.mu = [](double, Span x, Vec& out) { out.assign(x.size(), 0.0); };
}

double resolve(std::map<std::string, double>& params, const std::map<std::string, double>& overrides,
               const std::string& key, double fallback) {
    auto it = overrides.find(key);
    const double v = it == overrides.end() ? fallback : it->second;
    params[key] = v;
    return v;
}

void check_override_keys(const std::string& name, const std::map<std::string, double>& overrides,
                         std::initializer_list<const char*> allowed) {
    for (const auto& [k, v] : overrides) {
        if (std::find_if(allowed.begin(), allowed.end(),
                         [&](const char* a) { return k == a; }) == allowed.end())
            throw std::invalid_argument(name + " does not define parameter '" + k + "'");
        if (v <= 0.0)
            throw std::invalid_argument(name + ": parameter '" + k + "' must be positive");
    }
}

PDEProblem make_hjb(int d, const std::map<std::string, double>& ov) {
    PDEProblem p;
    p.name = "HJB";
    p.d = d;
    check_override_keys(p.name, ov, {"t_end"});
    p.t_end = resolve(p.params, ov, "t_end", 1.0);
    p.x0.assign(static_cast<size_t>(d), 0.0);
    set_zero_mu(p);
    set_constant_diag_sigma(p, std::sqrt(2.0));
    set_zero_jacobian(p);
    set_phi(p, [](double, Span, const auto& y, const auto& z) {
        auto s = z[0] * z[0];
        for (size_t j = 1; j < z.size(); ++j) s = s + z[j] * z[j];
        (void)y;
        return s;
    });
    p.g = [](Span x) { return std::log(0.5 * (1.0 + norm2sq(x))); };
    p.grad_g = [](Span x, Vec& out) {
        const double q = 1.0 + norm2sq(x);
        out.resize(x.size());
        for (size_t j = 0; j < x.size(); ++j) out[j] = 2.0 * x[j] / q;
    };
    p.g_dir2 = [](Span x, Span v) {
        const double q = 1.0 + norm2sq(x);
        const double xv = dot(x, v);
        return 2.0 * norm2sq(v) / q - 4.0 * xv * xv / (q * q);
    };
    return p;
}

PDEProblem make_bsb(int d, const std::map<std::string, double>& ov) {
    PDEProblem p;
    p.name = "BSB";
    p.d = d;
    check_override_keys(p.name, ov, {"t_end", "alpha", "r"});
    p.t_end = resolve(p.params, ov, "t_end", 1.0);
    const double alpha = resolve(p.params, ov, "alpha", 0.4);
    const double r = resolve(p.params, ov, "r", 0.05);
    p.x0.resize(static_cast<size_t>(d));
    for (int j = 0; j < d; ++j) p.x0[static_cast<size_t>(j)] = (j % 2 == 0) ? 1.0 : 0.5;
    set_zero_mu(p);
    p.sigma0_diagonal = true;
    p.sigma0_diag = [alpha](double, Span x, Vec& out) {
        out.resize(x.size());
        for (size_t j = 0; j < x.size(); ++j) out[j] = alpha * x[j];
    };
    p.sigma0_dense = [alpha](double, Span x, Mat& out) {
        out = Mat(static_cast<int>(x.size()), static_cast<int>(x.size()));
        for (size_t j = 0; j < x.size(); ++j)
            out(static_cast<int>(j), static_cast<int>(j)) = alpha * x[j];
    };
    p.has_sigma_jacobian = true;
    p.sigma_jacobian = [alpha, d](double, Span, const double*, const Vec*, std::vector<Mat>& out) {
        out.assign(static_cast<size_t>(d), Mat(d, d));
        for (int l = 0; l < d; ++l) out[static_cast<size_t>(l)](l, l) = alpha;
    };
    set_phi(p, [r](double, Span x, const auto& y, const auto& z) {
        return r * (y - dot_sd(z, x));
    });
    p.g = [](Span x) { return norm2sq(x); };
    p.grad_g = [](Span x, Vec& out) {
        out.resize(x.size());
        for (size_t j = 0; j < x.size(); ++j) out[j] = 2.0 * x[j];
    };
    p.g_dir2 = [](Span, Span v) { return 2.0 * norm2sq(v); };
    p.has_exact = true;
    p.exact = [r, alpha, T = p.t_end](double t, Span x) {
        return std::exp((r + alpha * alpha) * (T - t)) * norm2sq(x);
    };
    return p;
}

PDEProblem make_ac(int d, const std::map<std::string, double>& ov) {
    PDEProblem p;
    p.name = "AC";
    p.d = d;
    check_override_keys(p.name, ov, {"t_end"});
    p.t_end = resolve(p.params, ov, "t_end", 0.3);
    p.x0.assign(static_cast<size_t>(d), 0.0);
    set_zero_mu(p);
    set_constant_diag_sigma(p, 1.0);
    set_zero_jacobian(p);
    set_phi(p, [](double, Span, const auto& y, const auto& z) {
        (void)z;
        return y * y * y - y;
    });
    p.g = [](Span x) { return 1.0 / (2.0 + 0.4 * norm2sq(x)); };
    p.grad_g = [](Span x, Vec& out) {
        const double q = 2.0 + 0.4 * norm2sq(x);
        out.resize(x.size());
        for (size_t j = 0; j < x.size(); ++j) out[j] = -0.8 * x[j] / (q * q);
    };
    p.g_dir2 = [](Span x, Span v) {
        const double q = 2.0 + 0.4 * norm2sq(x);
        const double xv = dot(x, v);
        return -0.8 * norm2sq(v) / (q * q) + 1.28 * xv * xv / (q * q * q);
    };
    // Branching-diffusion reference from the source literature, valid only at
    // the default configuration.
    if (d == 20 && p.t_end == 0.3) p.reference_u0 = 0.30879;
    return p;
}

PDEProblem make_bz(int d, const std::map<std::string, double>& ov) {
    PDEProblem p;
    p.name = "BZ";
    p.d = d;
    check_override_keys(p.name, ov, {"t_end", "alpha", "r", "D"});
    p.t_end = resolve(p.params, ov, "t_end", 1.0);
    const double alpha = resolve(p.params, ov, "alpha", 0.3);
    const double r = resolve(p.params, ov, "r", 0.1);
    const double D = resolve(p.params, ov, "D", 0.1);
    p.x0.assign(static_cast<size_t>(d), M_PI / 2.0);
    set_zero_mu(p);
    set_constant_diag_sigma(p, 1.0);
    p.coupled = true;
    p.sigma_scale = [alpha](double y) { return alpha * y; };
    p.sigma_scale_dy = [alpha](double) { return alpha; };
    p.sigma_scale_var = [alpha](const ad::Var& y) { return y * alpha; };
    p.sigma_scale_dy_var = [alpha](const ad::Var& y) { return y * 0.0 + alpha; };
    p.has_sigma_jacobian = true;
    p.sigma_jacobian = [alpha, d, name = p.name](double, Span, const double*, const Vec* z,
                                                 std::vector<Mat>& out) {
        if (z == nullptr)
            throw std::invalid_argument(name + ": sigma Jacobian requires the surrogate gradient");
        out.assign(static_cast<size_t>(d), Mat(d, d));
        for (int l = 0; l < d; ++l) {
            const double s = alpha * (*z)[static_cast<size_t>(l)];
            for (int j = 0; j < d; ++j) out[static_cast<size_t>(l)](j, j) = s;
        }
    };
    set_phi(p, [r, alpha, D, T = p.t_end](double t, Span x, const auto& y, const auto& z) {
        (void)z;
        double sum = 0.0;
        for (double xj : x) sum += std::sin(xj);
        const double c = 0.5 * std::exp(-3.0 * r * (T - t)) * alpha * alpha * std::pow(D * sum, 3);
        return r * y - c;
    });
    p.g = [D](Span x) {
        double sum = 0.0;
        for (double xj : x) sum += std::sin(xj);
        return D * sum;
    };
    p.grad_g = [D](Span x, Vec& out) {
        out.resize(x.size());
        for (size_t j = 0; j < x.size(); ++j) out[j] = D * std::cos(x[j]);
    };
    p.g_dir2 = [D](Span x, Span v) {
        double s = 0.0;
        for (size_t j = 0; j < x.size(); ++j) s += -D * std::sin(x[j]) * v[j] * v[j];
        return s;
    };
    p.has_exact = true;
    p.exact = [r, D, T = p.t_end](double t, Span x) {
        double sum = 0.0;
        for (double xj : x) sum += std::sin(xj);
        return std::exp(-r * (T - t)) * D * sum;
    };
    return p;
}

PDEProblem make_pide(int d, const std::map<std::string, double>& ov) {
    PDEProblem p;
    p.name = "PIDE";
    p.d = d;
    check_override_keys(p.name, ov, {"t_end", "epsilon", "tau", "lambda", "mu_phi", "sigma_phi"});
    p.t_end = resolve(p.params, ov, "t_end", 1.0);
    const double eps = resolve(p.params, ov, "epsilon", 0.1);
    const double tau = resolve(p.params, ov, "tau", 0.1);
    const double lambda = resolve(p.params, ov, "lambda", 0.01);
    const double mu_phi = resolve(p.params, ov, "mu_phi", 0.01);
    const double sigma_phi = resolve(p.params, ov, "sigma_phi", 0.01);
    p.x0.assign(static_cast<size_t>(d), 1.0);
    p.mu_is_zero = false;
    p.mu = [eps](double, Span x, Vec& out) {
        out.resize(x.size());
        for (size_t j = 0; j < x.size(); ++j) out[j] = 0.5 * eps * x[j];
    };
    set_constant_diag_sigma(p, tau);
    set_zero_jacobian(p);
    set_phi(p, [lambda, mu_phi, sigma_phi, tau, eps, d](double, Span x, const auto& y,
                                                        const auto& z) {
        (void)z;
        const double c = lambda * (mu_phi * mu_phi + sigma_phi * sigma_phi) + tau * tau +
                         eps / static_cast<double>(d) * norm2sq(x);
        return y * 0.0 + c;
    });
    p.g = [d](Span x) { return norm2sq(x) / static_cast<double>(d); };
    p.grad_g = [d](Span x, Vec& out) {
        out.resize(x.size());
        for (size_t j = 0; j < x.size(); ++j) out[j] = 2.0 * x[j] / static_cast<double>(d);
    };
    p.g_dir2 = [d](Span, Span v) { return 2.0 * norm2sq(v) / static_cast<double>(d); };
    p.has_exact = true;
    p.exact = [d](double, Span x) { return norm2sq(x) / static_cast<double>(d); };
    p.jump_spec = JumpSpec{lambda, mu_phi, sigma_phi, tau, eps};
    return p;
}

} // namespace

const std::vector<std::string>& problem_names() {
    static const std::vector<std::string> names = {"HJB", "BSB", "AC", "BZ", "PIDE"};
    return names;
}

PDEProblem make_problem(const std::string& name, std::optional<int> d_override,
                        const std::map<std::string, double>& param_overrides) {
    if (d_override && *d_override <= 0) throw std::invalid_argument("dimension must be positive");
    if (name == "HJB") return make_hjb(d_override.value_or(100), param_overrides);
    if (name == "BSB") return make_bsb(d_override.value_or(100), param_overrides);
    if (name == "AC") return make_ac(d_override.value_or(20), param_overrides);
    if (name == "BZ") return make_bz(d_override.value_or(100), param_overrides);
    if (name == "PIDE") return make_pide(d_override.value_or(100), param_overrides);
    throw std::invalid_argument("unknown benchmark '" + name + "' (expected HJB, BSB, AC, BZ, PIDE)");
}

double exact_solution(const PDEProblem& p, double t, Span x) {
    if (!p.has_exact) throw std::logic_error(p.name + " has no analytic solution");
    if (t < 0.0 || t > p.t_end) throw std::invalid_argument("time outside [0, t_end]");
    return p.exact(t, x);
}

McEstimate hjb_reference_mc(const PDEProblem& p, Span x, double t, long n_samples, uint64_t seed,
                            Exec exec) {
    if (p.name != "HJB") throw std::invalid_argument("hjb_reference_mc requires the HJB problem");
    if (n_samples < 1) throw std::invalid_argument("n_samples must be >= 1");
    const double horizon = p.t_end - t;
    if (horizon <= 0.0) return {p.g(x), 0.0};

    const double scale = std::sqrt(2.0 * horizon);
    const int d = p.d;
    constexpr long kChunk = 16384;
    const long n_chunks = (n_samples + kChunk - 1) / kChunk;
    std::vector<double> sums(static_cast<size_t>(n_chunks), 0.0);
    std::vector<double> sums2(static_cast<size_t>(n_chunks), 0.0);

    parallel_for(exec, static_cast<int>(n_chunks), [&](int c) {
        Vec y(static_cast<size_t>(d));
        double s = 0.0;
        double s2 = 0.0;
        const long lo = static_cast<long>(c) * kChunk;
        const long hi = std::min(n_samples, lo + kChunk);
        for (long i = lo; i < hi; ++i) {
            CounterRng rng(seed, Stream::Reference, static_cast<uint64_t>(i));
            for (int j = 0; j < d; ++j)
                y[static_cast<size_t>(j)] = x[static_cast<size_t>(j)] + scale * rng.next_normal();
            const double v = std::exp(-p.g(y));
            s += v;
            s2 += v * v;
        }
        sums[static_cast<size_t>(c)] = s;
        sums2[static_cast<size_t>(c)] = s2;
    });

    double sum = 0.0;
    double sum2 = 0.0;
    for (long c = 0; c < n_chunks; ++c) {
        sum += sums[static_cast<size_t>(c)];
        sum2 += sums2[static_cast<size_t>(c)];
    }
    const double n = static_cast<double>(n_samples);
    const double mean = sum / n;
    const double var = std::max(0.0, sum2 / n - mean * mean);
    const double se_mean = std::sqrt(var / n);
    // delta method for -ln(mean)
    return {-std::log(mean), se_mean / mean};
}

void heun_drift_correction(const PDEProblem& p, double t, Span x, const double* y, const Vec* z,
                           Vec& out) {
    if (!p.has_sigma_jacobian)
        throw std::invalid_argument(p.name + ": Heun correction requires the sigma Jacobian");
    const int d = p.d;
    std::vector<Mat> jac;
    p.sigma_jacobian(t, x, y, z, jac);
    Mat sig = p.sigma(t, x, y ? std::optional<double>(*y) : std::nullopt);
    out.assign(static_cast<size_t>(d), 0.0);
    for (int l = 0; l < d; ++l) {
        const Mat& J = jac[static_cast<size_t>(l)];
        for (int j = 0; j < d; ++j) {
            double s = 0.0;
            for (int k = 0; k < d; ++k) s += J(j, k) * sig(l, k);
            out[static_cast<size_t>(j)] += 0.5 * s;
        }
    }
}

} // namespace fbsde
