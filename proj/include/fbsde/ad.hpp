#pragma once

#include <cassert>
#include <functional>
#include <vector>

namespace fbsde::ad {

/// Scalar reverse-mode tape. Losses are built per batch element as scalar
/// expressions over network outputs; network outputs enter as leaves whose
/// parameter adjoints are produced by hooks after the scalar sweep.
class Tape {
  public:
    struct Node {
        int a;
        int b;
        double pa;
        double pb;
    };

    int leaf(double v) {
        values_.push_back(v);
        nodes_.push_back({-1, -1, 0.0, 0.0});
        return static_cast<int>(values_.size()) - 1;
    }
    int unary(double v, int a, double pa) {
        values_.push_back(v);
        nodes_.push_back({a, -1, pa, 0.0});
        return static_cast<int>(values_.size()) - 1;
    }
    int binary(double v, int a, double pa, int b, double pb) {
        values_.push_back(v);
        nodes_.push_back({a, b, pa, pb});
        return static_cast<int>(values_.size()) - 1;
    }

    double value(int id) const { return values_[static_cast<size_t>(id)]; }
    double adjoint(int id) const { return adjoints_[static_cast<size_t>(id)]; }

    /// Hooks run after the scalar sweep; they read leaf adjoints and push
    /// them through the network parameter reverse passes.
    void add_hook(std::function<void(const Tape&)> h) { hooks_.push_back(std::move(h)); }

    void backward(int out_id, double seed = 1.0) {
        adjoints_.assign(values_.size(), 0.0);
        adjoints_[static_cast<size_t>(out_id)] = seed;
        for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
            const double g = adjoints_[static_cast<size_t>(i)];
            if (g == 0.0) continue;
            const Node& n = nodes_[static_cast<size_t>(i)];
            if (n.a >= 0) adjoints_[static_cast<size_t>(n.a)] += n.pa * g;
            if (n.b >= 0) adjoints_[static_cast<size_t>(n.b)] += n.pb * g;
        }
        for (auto& h : hooks_) h(*this);
    }

    void clear() {
        nodes_.clear();
        values_.clear();
        adjoints_.clear();
        hooks_.clear();
    }

    size_t size() const { return values_.size(); }

  private:
    std::vector<Node> nodes_;
    std::vector<double> values_;
    std::vector<double> adjoints_;
    std::vector<std::function<void(const Tape&)>> hooks_;
};

struct Var {
    Tape* tape = nullptr;
    int id = -1;
    double v = 0.0;

    Var() = default;
    Var(Tape& t, int i) : tape(&t), id(i), v(t.value(i)) {}
};

inline Var make_var(Tape& t, double value) { return Var(t, t.leaf(value)); }

inline Var operator+(const Var& a, const Var& b) {
    return Var(*a.tape, a.tape->binary(a.v + b.v, a.id, 1.0, b.id, 1.0));
}
inline Var operator-(const Var& a, const Var& b) {
    return Var(*a.tape, a.tape->binary(a.v - b.v, a.id, 1.0, b.id, -1.0));
}
inline Var operator*(const Var& a, const Var& b) {
    return Var(*a.tape, a.tape->binary(a.v * b.v, a.id, b.v, b.id, a.v));
}
inline Var operator/(const Var& a, const Var& b) {
    return Var(*a.tape, a.tape->binary(a.v / b.v, a.id, 1.0 / b.v, b.id, -a.v / (b.v * b.v)));
}
inline Var operator-(const Var& a) { return Var(*a.tape, a.tape->unary(-a.v, a.id, -1.0)); }

inline Var operator+(const Var& a, double c) { return Var(*a.tape, a.tape->unary(a.v + c, a.id, 1.0)); }
inline Var operator+(double c, const Var& a) { return a + c; }
inline Var operator-(const Var& a, double c) { return a + (-c); }
inline Var operator-(double c, const Var& a) { return Var(*a.tape, a.tape->unary(c - a.v, a.id, -1.0)); }
inline Var operator*(const Var& a, double c) { return Var(*a.tape, a.tape->unary(a.v * c, a.id, c)); }
inline Var operator*(double c, const Var& a) { return a * c; }
inline Var operator/(const Var& a, double c) { return a * (1.0 / c); }
inline Var operator/(double c, const Var& a) {
    return Var(*a.tape, a.tape->unary(c / a.v, a.id, -c / (a.v * a.v)));
}

inline double value_of(double x) { return x; }
inline double value_of(const Var& x) { return x.v; }

} // namespace fbsde::ad
