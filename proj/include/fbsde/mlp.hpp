#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "fbsde/common.hpp"

// fixed-order simd reductions: same binary, same result on every run
#if defined(_OPENMP)
#define FBSDE_PRAGMA(x) _Pragma(#x)
#define FBSDE_SIMD_REDUCE(var) FBSDE_PRAGMA(omp simd reduction(+ : var))
#else
#define FBSDE_SIMD_REDUCE(var)
#endif

namespace fbsde {

enum class Activation { Mish, LeakyRelu };
enum class Precision { F32, F64 };

struct MlpConfig {
    int input_dim = 2; // d + 1, time first
    int width = 64;
    int hidden_layers = 2;
    Activation activation = Activation::Mish;
    Precision precision = Precision::F64;
    uint64_t init_seed = 0;

    bool operator==(const MlpConfig&) const = default;
};

int param_count(const MlpConfig& cfg);

/// Variance-scaled uniform weights, zero biases, keyed by init_seed.
Vec init_params(const MlpConfig& cfg);

namespace detail {

constexpr double kLeakySlope = 0.01;

/// f, f', f'', f''' of the activation at z.
template <class Real>
struct ActDerivs {
    Real f, f1, f2, f3;
};

template <class Real>
inline ActDerivs<Real> act_derivs(Activation act, Real x) {
    if (act == Activation::LeakyRelu) {
        const Real s = x >= Real(0) ? Real(1) : Real(kLeakySlope);
        return {x * s, s, Real(0), Real(0)};
    }
    // mish(x) = x * tanh(softplus(x)); with e = exp(x),
    // tanh(log1p(e)) = e(e+2) / (e(e+2) + 2) and sigmoid = e/(1+e),
    // so one exponential covers every derivative
    if (x > Real(20)) return {x, Real(1), Real(0), Real(0)};
    const Real e = std::exp(x);
    const Real q = e * (e + Real(2));
    const Real t = q / (q + Real(2));
    const Real B = e / (Real(1) + e);
    const Real A = Real(1) - t * t;
    const Real AB = A * B;
    const Real C = Real(1) - B - Real(2) * t * B;
    const Real Cp = -B * (Real(1) - B) - Real(2) * (AB * B + t * B * (Real(1) - B));
    ActDerivs<Real> d;
    d.f = x * t;
    d.f1 = t + x * AB;
    d.f2 = AB * (Real(2) + x * C);
    d.f3 = AB * (Real(3) * C + x * C * C + x * Cp);
    return d;
}

} // namespace detail

/// Per-evaluation scratch: activations and pre-activations of up to three
/// Taylor streams. Stream 1 carries a first directional derivative, stream 2
/// the matching second directional derivative.
template <class Real>
struct MlpWork {
    std::vector<Real> a, z;   // stream 0: a holds input (n0) then L*width activations
    std::vector<Real> a1, z1; // stream 1
    std::vector<Real> a2, z2; // stream 2
    std::vector<Real> d1, d2, d3; // cached activation derivatives at z
    Real out = Real(0), out1 = Real(0), out2 = Real(0);
    int streams = 0;
};

/// Reverse-pass scratch, owned by the caller so one engine can serve many
/// threads.
template <class Real>
struct MlpScratch {
    std::vector<Real> d0, d1, ca, ca1, ca2, cz, cz1, cz2;
};

/// Fixed-architecture MLP with hand-rolled layerwise rules: plain forward,
/// first/second-order jets along an input direction, and reverse passes that
/// turn output-stream cotangents into parameter gradients. All passes compute
/// in `Real`; parameters are synced from the double master vector.
template <class Real>
class MlpEngine {
  public:
    explicit MlpEngine(const MlpConfig& cfg) : cfg_(cfg) {
        n0_ = cfg.input_dim;
        W_ = cfg.width;
        L_ = cfg.hidden_layers;
        weights_.assign(static_cast<size_t>(param_count(cfg)), Real(0));
        w_off_.resize(static_cast<size_t>(L_));
        b_off_.resize(static_cast<size_t>(L_));
        int off = 0;
        for (int l = 0; l < L_; ++l) {
            const int in = l == 0 ? n0_ : W_;
            w_off_[static_cast<size_t>(l)] = off;
            off += W_ * in;
            b_off_[static_cast<size_t>(l)] = off;
            off += W_;
        }
        wout_off_ = off;
        bout_off_ = off + W_;
    }

    void sync(const Vec& theta) {
        for (size_t i = 0; i < theta.size(); ++i) weights_[i] = static_cast<Real>(theta[i]);
    }

    const MlpConfig& config() const { return cfg_; }

    void resize_work(MlpWork<Real>& w, int streams) const {
        const size_t na = static_cast<size_t>(n0_ + L_ * W_);
        const size_t nz = static_cast<size_t>(L_ * W_);
        w.a.resize(na);
        w.z.resize(nz);
        w.d1.resize(nz);
        w.d2.resize(nz);
        w.d3.resize(nz);
        if (streams >= 2) {
            w.a1.resize(na);
            w.z1.resize(nz);
        }
        if (streams >= 3) {
            w.a2.resize(na);
            w.z2.resize(nz);
        }
        w.streams = streams;
    }

    /// s has input_dim entries (t first, then x).
    double forward(const double* s, MlpWork<Real>& w) const {
        resize_work(w, 1);
        for (int j = 0; j < n0_; ++j) w.a[static_cast<size_t>(j)] = static_cast<Real>(s[j]);
        for (int l = 0; l < L_; ++l) {
            const int in = l == 0 ? n0_ : W_;
            const Real* ain = w.a.data() + in_offset(l);
            const Real* Wl = weights_.data() + w_off_[static_cast<size_t>(l)];
            const Real* bl = weights_.data() + b_off_[static_cast<size_t>(l)];
            Real* zl = w.z.data() + static_cast<size_t>(l) * W_;
            Real* al = w.a.data() + static_cast<size_t>(n0_ + l * W_);
            Real* d1 = w.d1.data() + static_cast<size_t>(l) * W_;
            Real* d2 = w.d2.data() + static_cast<size_t>(l) * W_;
            Real* d3 = w.d3.data() + static_cast<size_t>(l) * W_;
            for (int i = 0; i < W_; ++i) {
                const Real* row = Wl + static_cast<size_t>(i) * in;
                Real acc = bl[i];
                FBSDE_SIMD_REDUCE(acc)
                for (int j = 0; j < in; ++j) acc += row[j] * ain[j];
                zl[i] = acc;
                const auto d = detail::act_derivs(cfg_.activation, acc);
                al[i] = d.f;
                d1[i] = d.f1;
                d2[i] = d.f2;
                d3[i] = d.f3;
            }
        }
        const Real* wo = weights_.data() + wout_off_;
        const Real* aL = w.a.data() + static_cast<size_t>(n0_ + (L_ - 1) * W_);
        Real u = weights_[static_cast<size_t>(bout_off_)];
        for (int i = 0; i < W_; ++i) u += wo[i] * aL[i];
        w.out = u;
        return static_cast<double>(u);
    }

    /// First-order jet along input tangent v (input_dim entries). Fills
    /// streams 0 and 1; returns d/de u(s + e v).
    double jet1(const double* s, const double* v, MlpWork<Real>& w) const {
        forward(s, w);
        return jet1_tangent(v, w);
    }

    /// Tangent propagation reusing a valid stream 0 (and its cached
    /// activation derivatives) from a prior forward().
    double jet1_tangent(const double* v, MlpWork<Real>& w) const {
        resize_work(w, 2);
        for (int j = 0; j < n0_; ++j) w.a1[static_cast<size_t>(j)] = static_cast<Real>(v[j]);
        for (int l = 0; l < L_; ++l) {
            const int in = l == 0 ? n0_ : W_;
            const Real* a1in = w.a1.data() + in_offset(l);
            const Real* Wl = weights_.data() + w_off_[static_cast<size_t>(l)];
            const Real* d1 = w.d1.data() + static_cast<size_t>(l) * W_;
            Real* z1l = w.z1.data() + static_cast<size_t>(l) * W_;
            Real* a1l = w.a1.data() + static_cast<size_t>(n0_ + l * W_);
            for (int i = 0; i < W_; ++i) {
                const Real* row = Wl + static_cast<size_t>(i) * in;
                Real acc = Real(0);
                FBSDE_SIMD_REDUCE(acc)
                for (int j = 0; j < in; ++j) acc += row[j] * a1in[j];
                z1l[i] = acc;
                a1l[i] = d1[i] * acc;
            }
        }
        const Real* wo = weights_.data() + wout_off_;
        const Real* a1L = w.a1.data() + static_cast<size_t>(n0_ + (L_ - 1) * W_);
        Real du = Real(0);
        for (int i = 0; i < W_; ++i) du += wo[i] * a1L[i];
        w.out1 = du;
        return static_cast<double>(du);
    }

    /// Second-order jet along v (second-order input tangent zero). Returns
    /// d2/de2 u(s + e v); streams 0..2 are filled.
    double jet2(const double* s, const double* v, MlpWork<Real>& w) const {
        jet1(s, v, w);
        resize_work(w, 3);
        for (int j = 0; j < n0_; ++j) w.a2[static_cast<size_t>(j)] = Real(0);
        for (int l = 0; l < L_; ++l) {
            const int in = l == 0 ? n0_ : W_;
            const Real* a2in = w.a2.data() + in_offset(l);
            const Real* Wl = weights_.data() + w_off_[static_cast<size_t>(l)];
            const Real* d1 = w.d1.data() + static_cast<size_t>(l) * W_;
            const Real* d2 = w.d2.data() + static_cast<size_t>(l) * W_;
            const Real* z1l = w.z1.data() + static_cast<size_t>(l) * W_;
            Real* z2l = w.z2.data() + static_cast<size_t>(l) * W_;
            Real* a2l = w.a2.data() + static_cast<size_t>(n0_ + l * W_);
            for (int i = 0; i < W_; ++i) {
                const Real* row = Wl + static_cast<size_t>(i) * in;
                Real acc = Real(0);
                FBSDE_SIMD_REDUCE(acc)
                for (int j = 0; j < in; ++j) acc += row[j] * a2in[j];
                z2l[i] = acc;
                a2l[i] = d2[i] * z1l[i] * z1l[i] + d1[i] * acc;
            }
        }
        const Real* wo = weights_.data() + wout_off_;
        const Real* a2L = w.a2.data() + static_cast<size_t>(n0_ + (L_ - 1) * W_);
        Real ddu = Real(0);
        for (int i = 0; i < W_; ++i) ddu += wo[i] * a2L[i];
        w.out2 = ddu;
        return static_cast<double>(ddu);
    }

    /// Gradient of the output with respect to the input (input_dim entries).
    /// Requires a prior forward() on w.
    void input_gradient(const MlpWork<Real>& w, MlpScratch<Real>& sc, double* gs) const {
        std::vector<Real>& delta = sc.d0;
        std::vector<Real>& delta2 = sc.d1;
        delta.assign(static_cast<size_t>(W_), Real(0));
        const Real* wo = weights_.data() + wout_off_;
        for (int i = 0; i < W_; ++i) delta[static_cast<size_t>(i)] = wo[i];
        for (int l = L_ - 1; l >= 0; --l) {
            const int in = l == 0 ? n0_ : W_;
            const Real* Wl = weights_.data() + w_off_[static_cast<size_t>(l)];
            const Real* d1 = w.d1.data() + static_cast<size_t>(l) * W_;
            for (int i = 0; i < W_; ++i) delta[static_cast<size_t>(i)] *= d1[i];
            delta2.assign(static_cast<size_t>(in), Real(0));
            for (int i = 0; i < W_; ++i) {
                const Real di = delta[static_cast<size_t>(i)];
                if (di == Real(0)) continue;
                const Real* row = Wl + static_cast<size_t>(i) * in;
                for (int j = 0; j < in; ++j) delta2[static_cast<size_t>(j)] += row[j] * di;
            }
            delta.swap(delta2);
        }
        for (int j = 0; j < n0_; ++j) gs[j] = static_cast<double>(delta[static_cast<size_t>(j)]);
    }

    /// Parameter-gradient reverse pass. Seeds (su, s1, s2) weight the output
    /// streams present in w; cotangents flow back through every stored
    /// stream. Accumulates into gtheta (param_count entries).
    void reverse(const MlpWork<Real>& w, MlpScratch<Real>& sc, double su, double s1, double s2,
                 double* gtheta) const {
        const int streams = w.streams;
        auto& ca = sc.ca;
        auto& ca1 = sc.ca1;
        auto& ca2 = sc.ca2;
        auto& cz = sc.cz;
        auto& cz1 = sc.cz1;
        auto& cz2 = sc.cz2;

        const Real rsu = static_cast<Real>(su);
        const Real rs1 = static_cast<Real>(s1);
        const Real rs2 = static_cast<Real>(s2);

        // output layer: u = wout . aL + bout (and the same contraction per stream)
        const Real* wo = weights_.data() + wout_off_;
        const Real* aL = w.a.data() + static_cast<size_t>(n0_ + (L_ - 1) * W_);
        const Real* a1L = streams >= 2 ? w.a1.data() + static_cast<size_t>(n0_ + (L_ - 1) * W_) : nullptr;
        const Real* a2L = streams >= 3 ? w.a2.data() + static_cast<size_t>(n0_ + (L_ - 1) * W_) : nullptr;

        ca.assign(static_cast<size_t>(W_), Real(0));
        ca1.assign(static_cast<size_t>(W_), Real(0));
        ca2.assign(static_cast<size_t>(W_), Real(0));
        double* gwo = gtheta + wout_off_;
        for (int i = 0; i < W_; ++i) {
            double g = su * static_cast<double>(aL[i]);
            if (streams >= 2) g += s1 * static_cast<double>(a1L[i]);
            if (streams >= 3) g += s2 * static_cast<double>(a2L[i]);
            gwo[i] += g;
            ca[static_cast<size_t>(i)] = rsu * wo[i];
            if (streams >= 2) ca1[static_cast<size_t>(i)] = rs1 * wo[i];
            if (streams >= 3) ca2[static_cast<size_t>(i)] = rs2 * wo[i];
        }
        gtheta[bout_off_] += su;

        for (int l = L_ - 1; l >= 0; --l) {
            const int in = l == 0 ? n0_ : W_;
            const Real* Wl = weights_.data() + w_off_[static_cast<size_t>(l)];
            const Real* d1 = w.d1.data() + static_cast<size_t>(l) * W_;
            const Real* d2 = w.d2.data() + static_cast<size_t>(l) * W_;
            const Real* d3 = w.d3.data() + static_cast<size_t>(l) * W_;
            const Real* z1l = streams >= 2 ? w.z1.data() + static_cast<size_t>(l) * W_ : nullptr;
            const Real* z2l = streams >= 3 ? w.z2.data() + static_cast<size_t>(l) * W_ : nullptr;
            const Real* ain = w.a.data() + in_offset(l);
            const Real* a1in = streams >= 2 ? w.a1.data() + in_offset(l) : nullptr;
            const Real* a2in = streams >= 3 ? w.a2.data() + in_offset(l) : nullptr;

            cz.assign(static_cast<size_t>(W_), Real(0));
            if (streams >= 2) cz1.assign(static_cast<size_t>(W_), Real(0));
            if (streams >= 3) cz2.assign(static_cast<size_t>(W_), Real(0));
            for (int i = 0; i < W_; ++i) {
                Real czi = d1[i] * ca[static_cast<size_t>(i)];
                if (streams >= 2) czi += d2[i] * z1l[i] * ca1[static_cast<size_t>(i)];
                if (streams >= 3)
                    czi += (d3[i] * z1l[i] * z1l[i] + d2[i] * z2l[i]) * ca2[static_cast<size_t>(i)];
                cz[static_cast<size_t>(i)] = czi;
                if (streams >= 2) {
                    Real c1 = d1[i] * ca1[static_cast<size_t>(i)];
                    if (streams >= 3) c1 += Real(2) * d2[i] * z1l[i] * ca2[static_cast<size_t>(i)];
                    cz1[static_cast<size_t>(i)] = c1;
                }
                if (streams >= 3) cz2[static_cast<size_t>(i)] = d1[i] * ca2[static_cast<size_t>(i)];
            }

            double* gW = gtheta + w_off_[static_cast<size_t>(l)];
            double* gb = gtheta + b_off_[static_cast<size_t>(l)];
            for (int i = 0; i < W_; ++i) {
                const Real c0 = cz[static_cast<size_t>(i)];
                const Real c1 = streams >= 2 ? cz1[static_cast<size_t>(i)] : Real(0);
                const Real c2 = streams >= 3 ? cz2[static_cast<size_t>(i)] : Real(0);
                double* grow = gW + static_cast<size_t>(i) * in;
                for (int j = 0; j < in; ++j) {
                    Real g = c0 * ain[j];
                    if (streams >= 2) g += c1 * a1in[j];
                    if (streams >= 3) g += c2 * a2in[j];
                    grow[j] += static_cast<double>(g);
                }
                gb[i] += static_cast<double>(c0);
            }

            if (l > 0) {
                // cotangents for the previous layer's activations
                ca.assign(static_cast<size_t>(in), Real(0));
                if (streams >= 2) ca1.assign(static_cast<size_t>(in), Real(0));
                if (streams >= 3) ca2.assign(static_cast<size_t>(in), Real(0));
                for (int i = 0; i < W_; ++i) {
                    const Real* row = Wl + static_cast<size_t>(i) * in;
                    const Real c0 = cz[static_cast<size_t>(i)];
                    const Real c1 = streams >= 2 ? cz1[static_cast<size_t>(i)] : Real(0);
                    const Real c2 = streams >= 3 ? cz2[static_cast<size_t>(i)] : Real(0);
                    for (int j = 0; j < in; ++j) {
                        ca[static_cast<size_t>(j)] += row[j] * c0;
                        if (streams >= 2) ca1[static_cast<size_t>(j)] += row[j] * c1;
                        if (streams >= 3) ca2[static_cast<size_t>(j)] += row[j] * c2;
                    }
                }
            }
        }
    }

  private:
    size_t in_offset(int l) const {
        return l == 0 ? 0 : static_cast<size_t>(n0_ + (l - 1) * W_);
    }

    MlpConfig cfg_;
    int n0_ = 0, W_ = 0, L_ = 0;
    int wout_off_ = 0, bout_off_ = 0;
    std::vector<int> w_off_, b_off_;
    std::vector<Real> weights_;
};

} // namespace fbsde
