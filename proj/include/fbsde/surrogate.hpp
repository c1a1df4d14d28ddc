#pragma once

#include <deque>
#include <memory>

#include "fbsde/ad.hpp"
#include "fbsde/mlp.hpp"
#include "fbsde/problems.hpp"

namespace fbsde {

struct EvalStats {
    long value_evals = 0;
    long grad_evals = 0;
    long dir2_evals = 0;
    long laplacian_evals = 0; // full weighted-trace computations
};

/// Parameterized scalar field u_theta(t, x). With the hard constraint the
/// field evaluates as g(x) + (t_end - t) * net(t, x), so terminal value and
/// gradient identities hold exactly by construction.
struct Surrogate {
    MlpConfig config;
    Vec theta;
    bool hard_constraint = false;
    std::shared_ptr<const PDEProblem> constraint_problem;

    std::shared_ptr<MlpEngine<double>> eng64;
    std::shared_ptr<MlpEngine<float>> eng32;

    static Surrogate create(const MlpConfig& cfg) {
        Surrogate s;
        s.config = cfg;
        s.theta = init_params(cfg);
        s.sync();
        return s;
    }

    /// Push the master parameters into the compute engines. Call after every
    /// parameter update. Engines are copy-on-write: a copied surrogate gets
    /// its own engine the first time it syncs.
    void sync() {
        if (config.precision == Precision::F64) {
            if (!eng64 || eng64.use_count() > 1) eng64 = std::make_shared<MlpEngine<double>>(config);
            eng64->sync(theta);
        } else {
            if (!eng32 || eng32.use_count() > 1) eng32 = std::make_shared<MlpEngine<float>>(config);
            eng32->sync(theta);
        }
    }

    int spatial_dim() const { return config.input_dim - 1; }
    double t_end() const { return constraint_problem ? constraint_problem->t_end : 0.0; }
};

Surrogate apply_hard_constraint(const Surrogate& raw, const PDEProblem& problem);

/// Plain-double evaluator over a surrogate. One instance per thread; the
/// returned gradient buffer is caller-owned.
template <class Real>
class FieldEvalT {
  public:
    using scalar = double;

    explicit FieldEvalT(const Surrogate& s, EvalStats* stats = nullptr)
        : s_(s), eng_(engine_of(s)), stats_(stats) {
        in_.resize(static_cast<size_t>(s.config.input_dim));
        vin_.resize(static_cast<size_t>(s.config.input_dim));
        gin_.resize(static_cast<size_t>(s.config.input_dim));
    }

    double value(double t, Span x) {
        if (stats_) ++stats_->value_evals;
        pack(t, x);
        const double n = eng_.forward(in_.data(), w_);
        return compose_value(t, x, n);
    }

    void value_grad(double t, Span x, double& u, double* du_dt, Vec& grad) {
        if (stats_) ++stats_->grad_evals;
        pack(t, x);
        const double n = eng_.forward(in_.data(), w_);
        eng_.input_gradient(w_, sc_, gin_.data());
        const int d = s_.spatial_dim();
        grad.resize(static_cast<size_t>(d));
        u = compose_value(t, x, n);
        if (s_.hard_constraint) {
            const PDEProblem& p = *s_.constraint_problem;
            const double rem = p.t_end - t;
            p.grad_g(x, gg_);
            for (int j = 0; j < d; ++j)
                grad[static_cast<size_t>(j)] = gg_[static_cast<size_t>(j)] + rem * gin_[static_cast<size_t>(j + 1)];
            if (du_dt) *du_dt = -n + rem * gin_[0];
        } else {
            for (int j = 0; j < d; ++j) grad[static_cast<size_t>(j)] = gin_[static_cast<size_t>(j + 1)];
            if (du_dt) *du_dt = gin_[0];
        }
    }

    /// Second directional derivative along the spatial direction v.
    double dir2(double t, Span x, Span v) {
        if (stats_) ++stats_->dir2_evals;
        pack(t, x);
        vin_[0] = 0.0;
        for (size_t j = 0; j < v.size(); ++j) vin_[j + 1] = v[j];
        const double h = eng_.jet2(in_.data(), vin_.data(), w_);
        if (s_.hard_constraint) {
            const PDEProblem& p = *s_.constraint_problem;
            return p.g_dir2(x, v) + (p.t_end - t) * h;
        }
        return h;
    }

    EvalStats* stats() { return stats_; }

  private:
    void pack(double t, Span x) {
        if (!std::isfinite(t) || !all_finite(x))
            throw std::invalid_argument("surrogate evaluated at non-finite input");
        in_[0] = t;
        for (size_t j = 0; j < x.size(); ++j) in_[j + 1] = x[j];
    }
    double compose_value(double t, Span x, double net) const {
        if (!s_.hard_constraint) return net;
        const PDEProblem& p = *s_.constraint_problem;
        return p.g(x) + (p.t_end - t) * net;
    }

    static const MlpEngine<Real>& engine_of(const Surrogate& s) {
        if constexpr (std::is_same_v<Real, double>) {
            if (!s.eng64) throw std::logic_error("surrogate not synced for f64 evaluation");
            return *s.eng64;
        } else {
            if (!s.eng32) throw std::logic_error("surrogate not synced for f32 evaluation");
            return *s.eng32;
        }
    }

    const Surrogate& s_;
    const MlpEngine<Real>& eng_;
    MlpWork<Real> w_;
    MlpScratch<Real> sc_;
    Vec in_, vin_, gin_, gg_;
    EvalStats* stats_;
};

/// Tape-backed evaluator: network outputs enter the scalar tape as leaves;
/// flush() replays each recorded point's stored streams in reverse and
/// accumulates exact parameter gradients into `gtheta`. Point contexts are
/// pooled, so one evaluator can serve many batch elements via reset().
template <class Real>
class TapeEvalT {
  public:
    using scalar = ad::Var;

    TapeEvalT(ad::Tape& tape, const Surrogate& s, Vec& gtheta, EvalStats* stats = nullptr)
        : tape_(tape), s_(s), gtheta_(gtheta), stats_(stats) {
        if (s.config.precision == Precision::F64) {
            if (!s.eng64) throw std::logic_error("surrogate not synced");
        } else if (!s.eng32) {
            throw std::logic_error("surrogate not synced");
        }
        gin_.resize(static_cast<size_t>(s.config.input_dim));
        static_assert(sizeof(Real) > 0);
    }

    /// Start a fresh element; pooled contexts are reused. The caller clears
    /// the tape itself.
    void reset() {
        cursor_ = 0;
        hooks_.clear();
    }

    ad::Var value(double t, Span x) {
        if (stats_) ++stats_->value_evals;
        Ctx& c = new_ctx(t, x);
        const double n = eng().forward(c.in.data(), c.w);
        const double rem = s_.hard_constraint ? s_.constraint_problem->t_end - t : 0.0;
        const double val = s_.hard_constraint ? s_.constraint_problem->g(x) + rem * n : n;
        const int id = tape_.leaf(val);
        hooks_.push_back({HookKind::Value, &c, id, -1, -1, 0, rem});
        return ad::Var(tape_, id);
    }

    void value_grad(double t, Span x, ad::Var& u, ad::Var* du_dt, std::vector<ad::Var>& grad) {
        if (stats_) ++stats_->grad_evals;
        Ctx& c = new_ctx(t, x);
        const double n = eng().forward(c.in.data(), c.w);
        eng().input_gradient(c.w, sc_, gin_.data());
        const int d = s_.spatial_dim();
        grad.clear();
        int t_id = -1;
        const bool hard = s_.hard_constraint;
        const double rem = hard ? s_.constraint_problem->t_end - t : 0.0;
        if (hard) {
            const PDEProblem& p = *s_.constraint_problem;
            u = ad::Var(tape_, tape_.leaf(p.g(x) + rem * n));
            p.grad_g(x, gg_);
            for (int j = 0; j < d; ++j)
                grad.push_back(ad::Var(tape_, tape_.leaf(gg_[static_cast<size_t>(j)] +
                                                         rem * gin_[static_cast<size_t>(j + 1)])));
            if (du_dt) {
                t_id = tape_.leaf(-n + rem * gin_[0]);
                *du_dt = ad::Var(tape_, t_id);
            }
        } else {
            u = ad::Var(tape_, tape_.leaf(n));
            for (int j = 0; j < d; ++j)
                grad.push_back(ad::Var(tape_, tape_.leaf(gin_[static_cast<size_t>(j + 1)])));
            if (du_dt) {
                t_id = tape_.leaf(gin_[0]);
                *du_dt = ad::Var(tape_, t_id);
            }
        }
        // gradient leaf ids are consecutive starting at grad[0]
        hooks_.push_back({HookKind::ValueGrad, &c, u.id, grad[0].id, t_id, d, rem});
    }

    ad::Var dir2(double t, Span x, Span v) {
        if (stats_) ++stats_->dir2_evals;
        Ctx& c = new_ctx(t, x);
        c.dir.assign(c.in.size(), 0.0);
        for (size_t j = 0; j < v.size(); ++j) c.dir[j + 1] = v[j];
        const double h = eng().jet2(c.in.data(), c.dir.data(), c.w);
        const bool hard = s_.hard_constraint;
        const double rem = hard ? s_.constraint_problem->t_end - t : 0.0;
        const double val = hard ? s_.constraint_problem->g_dir2(x, v) + rem * h : h;
        const int id = tape_.leaf(val);
        hooks_.push_back({HookKind::Dir2, &c, id, -1, -1, 0, rem});
        return ad::Var(tape_, id);
    }

    /// Push the recorded points' adjoints into the parameter gradient. Call
    /// after tape.backward().
    void flush(const ad::Tape& tp) {
        const bool hard = s_.hard_constraint;
        for (const Hook& h : hooks_) {
            switch (h.kind) {
            case HookKind::Value: {
                const double a = tp.adjoint(h.id0);
                if (a == 0.0) break;
                eng().reverse(h.ctx->w, sc_, hard ? a * h.rem : a, 0.0, 0.0, gtheta_.data());
                break;
            }
            case HookKind::Dir2: {
                const double a = tp.adjoint(h.id0);
                if (a == 0.0) break;
                eng().reverse(h.ctx->w, sc_, 0.0, 0.0, hard ? a * h.rem : a, gtheta_.data());
                break;
            }
            case HookKind::ValueGrad: {
                const double au = tp.adjoint(h.id0);
                const double at = h.id2 >= 0 ? tp.adjoint(h.id2) : 0.0;
                const double su = hard ? au * h.rem - at : au;
                bool any_dir = false;
                dirbuf_.assign(h.ctx->in.size(), 0.0);
                dirbuf_[0] = hard ? at * h.rem : at;
                any_dir = any_dir || dirbuf_[0] != 0.0;
                for (int j = 0; j < h.count; ++j) {
                    const double az = tp.adjoint(h.id1 + j);
                    dirbuf_[static_cast<size_t>(j) + 1] = hard ? az * h.rem : az;
                    any_dir = any_dir || dirbuf_[static_cast<size_t>(j) + 1] != 0.0;
                }
                if (any_dir) {
                    eng().jet1_tangent(dirbuf_.data(), h.ctx->w);
                    eng().reverse(h.ctx->w, sc_, su, 1.0, 0.0, gtheta_.data());
                } else if (su != 0.0) {
                    eng().reverse(h.ctx->w, sc_, su, 0.0, 0.0, gtheta_.data());
                }
                break;
            }
            }
        }
    }

    ad::Tape& tape() { return tape_; }
    EvalStats* stats() { return stats_; }

  private:
    struct Ctx {
        Vec in;
        Vec dir;
        MlpWork<Real> w;
    };
    enum class HookKind { Value, ValueGrad, Dir2 };
    struct Hook {
        HookKind kind;
        Ctx* ctx;
        int id0; // value leaf
        int id1; // first gradient leaf
        int id2; // time-derivative leaf
        int count;
        double rem;
    };

    Ctx& new_ctx(double t, Span x) {
        if (!std::isfinite(t) || !all_finite(x))
            throw std::invalid_argument("surrogate evaluated at non-finite input");
        if (cursor_ == pool_.size()) pool_.push_back(std::make_unique<Ctx>());
        Ctx& c = *pool_[cursor_++];
        c.in.resize(static_cast<size_t>(s_.config.input_dim));
        c.in[0] = t;
        for (size_t j = 0; j < x.size(); ++j) c.in[j + 1] = x[j];
        return c;
    }

    const MlpEngine<Real>& eng() const {
        if constexpr (std::is_same_v<Real, double>)
            return *s_.eng64;
        else
            return *s_.eng32;
    }

    ad::Tape& tape_;
    const Surrogate& s_;
    Vec& gtheta_;
    std::vector<std::unique_ptr<Ctx>> pool_;
    size_t cursor_ = 0;
    std::vector<Hook> hooks_;
    MlpScratch<Real> sc_;
    Vec gin_, gg_, dirbuf_;
    EvalStats* stats_;
};

/// Runs fn with the precision-matched plain evaluator.
template <class Fn>
decltype(auto) with_field_eval(const Surrogate& s, EvalStats* stats, Fn&& fn) {
    if (s.config.precision == Precision::F64) {
        FieldEvalT<double> ev(s, stats);
        return fn(ev);
    }
    FieldEvalT<float> ev(s, stats);
    return fn(ev);
}

/// Runs fn with the precision-matched tape evaluator.
template <class Fn>
decltype(auto) with_tape_eval(ad::Tape& tape, const Surrogate& s, Vec& gtheta, EvalStats* stats,
                              Fn&& fn) {
    if (s.config.precision == Precision::F64) {
        TapeEvalT<double> ev(tape, s, gtheta, stats);
        return fn(ev);
    }
    TapeEvalT<float> ev(tape, s, gtheta, stats);
    return fn(ev);
}

double eval_value(const Surrogate& s, double t, Span x);
Vec eval_gradient(const Surrogate& s, double t, Span x);
double eval_weighted_laplacian(const Surrogate& s, double t, Span x, const Mat& sigma);

/// Exact parameter gradient of a scalar objective built through a tape
/// evaluator, including contributions through gradient and weighted-Laplacian
/// evaluations inside the objective.
template <class F>
Vec param_gradient(const Surrogate& s, F&& objective) {
    Vec g(static_cast<size_t>(param_count(s.config)), 0.0);
    ad::Tape tape;
    with_tape_eval(tape, s, g, nullptr, [&](auto& ev) {
        ad::Var out = objective(ev);
        if (!std::isfinite(out.v)) throw std::runtime_error("objective is non-finite");
        tape.backward(out.id);
        ev.flush(tape);
    });
    return g;
}

void save_checkpoint(const Surrogate& s, const std::string& path);
Surrogate load_checkpoint(const std::string& path);

} // namespace fbsde
