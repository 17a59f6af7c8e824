// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dualsft/linalg.hpp"

namespace dualsft {

class Tape;

/// Handle to a scalar node recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::uint32_t id = 0;

    double value() const;
};

/**
 * Reverse-mode differentiation tape over scalar nodes.
 *
 * Every node stores its value and the local partial derivatives with respect
 * to its parents. `backward` seeds the root adjoint with one and sweeps the
 * nodes in reverse creation order, so each adjoint is complete before it is
 * propagated. Adjoints of intermediate nodes stay readable after the sweep,
 * which is how affine layers recover their pre-activation gradients.
 */
class Tape {
public:
    Var variable(double value) { return push(value, {}, {}); }

    Var push(double value, std::span<const std::uint32_t> parents, std::span<const double> partials) {
        assert(parents.size() == partials.size());
        Node n;
        n.value = value;
        n.first = static_cast<std::uint32_t>(parents_.size());
        n.count = static_cast<std::uint32_t>(parents.size());
        parents_.insert(parents_.end(), parents.begin(), parents.end());
        partials_.insert(partials_.end(), partials.begin(), partials.end());
        nodes_.push_back(n);
        return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    Var unary(double value, Var a, double da) {
        const std::uint32_t p[1] = {a.id};
        const double d[1] = {da};
        return push(value, p, d);
    }

    Var binary(double value, Var a, double da, Var b, double db) {
        const std::uint32_t p[2] = {a.id, b.id};
        const double d[2] = {da, db};
        return push(value, p, d);
    }

    double value(Var v) const { return nodes_[v.id].value; }
    double adjoint(Var v) const { return adjoints_.empty() ? 0.0 : adjoints_[v.id]; }

    void backward(Var root) {
        adjoints_.assign(nodes_.size(), 0.0);
        adjoints_[root.id] = 1.0;
        for (std::size_t i = root.id + 1; i-- > 0;) {
            const double a = adjoints_[i];
            if (a == 0.0) continue;
            const Node& n = nodes_[i];
            for (std::uint32_t k = 0; k < n.count; ++k)
                adjoints_[parents_[n.first + k]] += a * partials_[n.first + k];
        }
    }

    std::size_t size() const { return nodes_.size(); }

    void clear() {
        nodes_.clear();
        parents_.clear();
        partials_.clear();
        adjoints_.clear();
    }

private:
    struct Node {
        double value = 0.0;
        std::uint32_t first = 0;
        std::uint32_t count = 0;
    };
    std::vector<Node> nodes_;
    std::vector<std::uint32_t> parents_;
    std::vector<double> partials_;
    std::vector<double> adjoints_;
};

inline double Var::value() const { return tape->value(*this); }

inline double value_of(double x) { return x; }
inline double value_of(Var x) { return x.value(); }

inline Var operator+(Var a, Var b) { return a.tape->binary(a.value() + b.value(), a, 1.0, b, 1.0); }
inline Var operator-(Var a, Var b) { return a.tape->binary(a.value() - b.value(), a, 1.0, b, -1.0); }
inline Var operator*(Var a, Var b) { return a.tape->binary(a.value() * b.value(), a, b.value(), b, a.value()); }
inline Var operator/(Var a, Var b) {
    const double bv = b.value();
    const double q = a.value() / bv;
    return a.tape->binary(q, a, 1.0 / bv, b, -q / bv);
}
inline Var operator-(Var a) { return a.tape->unary(-a.value(), a, -1.0); }

inline Var operator+(Var a, double b) { return a.tape->unary(a.value() + b, a, 1.0); }
inline Var operator+(double a, Var b) { return b + a; }
inline Var operator-(Var a, double b) { return a.tape->unary(a.value() - b, a, 1.0); }
inline Var operator-(double a, Var b) { return b.tape->unary(a - b.value(), b, -1.0); }
inline Var operator*(Var a, double b) { return a.tape->unary(a.value() * b, a, b); }
inline Var operator*(double a, Var b) { return b * a; }
inline Var operator/(Var a, double b) { return a.tape->unary(a.value() / b, a, 1.0 / b); }

inline Var tanh(Var a) {
    const double t = std::tanh(a.value());
    return a.tape->unary(t, a, 1.0 - t * t);
}
inline Var exp(Var a) {
    const double e = std::exp(a.value());
    return a.tape->unary(e, a, e);
}
inline Var log(Var a) { return a.tape->unary(std::log(a.value()), a, 1.0 / a.value()); }

// n-ary helpers: one node per call keeps tapes short for dense layers.

/// sum_j w[j] * x[j] (+ *bias when given), recorded as a single node.
inline double linear(std::span<const double> w, std::span<const double> x, const double* bias = nullptr) {
    const double v = dot(w, x);
    return bias ? *bias + v : v;
}

inline Var linear(std::span<const Var> w, std::span<const double> x, const Var* bias = nullptr) {
    Tape& t = *w.front().tape;
    std::vector<std::uint32_t> p;
    Vec d;
    p.reserve(w.size() + 1);
    d.reserve(w.size() + 1);
    double v = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        v += w[j].value() * x[j];
        p.push_back(w[j].id);
        d.push_back(x[j]);
    }
    if (bias) {
        v = bias->value() + v;
        p.push_back(bias->id);
        d.push_back(1.0);
    }
    return t.push(v, p, d);
}

inline Var linear(std::span<const Var> w, std::span<const Var> x, const Var* bias = nullptr) {
    Tape& t = *w.front().tape;
    std::vector<std::uint32_t> p;
    Vec d;
    p.reserve(2 * w.size() + 1);
    d.reserve(2 * w.size() + 1);
    double v = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j) {
        const double wv = w[j].value();
        const double xv = x[j].value();
        v += wv * xv;
        p.push_back(w[j].id);
        d.push_back(xv);
        p.push_back(x[j].id);
        d.push_back(wv);
    }
    if (bias) {
        v = bias->value() + v;
        p.push_back(bias->id);
        d.push_back(1.0);
    }
    return t.push(v, p, d);
}

/// Sum of all terms as a single node.
inline double add_all(std::span<const double> terms) { return sum(terms); }

inline Var add_all(std::span<const Var> terms) {
    std::vector<std::uint32_t> p(terms.size());
    Vec d(terms.size(), 1.0);
    double v = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        v += terms[i].value();
        p[i] = terms[i].id;
    }
    return terms.front().tape->push(v, p, d);
}

/// Numerically stable log(sum_i exp(z_i / temperature)).
inline double log_sum_exp(std::span<const double> z, double temperature = 1.0) {
    double m = -INFINITY;
    for (double zi : z) m = std::max(m, zi / temperature);
    double s = 0.0;
    for (double zi : z) s += std::exp(zi / temperature - m);
    return m + std::log(s);
}

inline Var log_sum_exp(std::span<const Var> z, double temperature = 1.0) {
    Vec zv(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) zv[i] = z[i].value();
    const double lse = log_sum_exp(zv, temperature);
    std::vector<std::uint32_t> p(z.size());
    Vec d(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        p[i] = z[i].id;
        d[i] = std::exp(zv[i] / temperature - lse) / temperature;
    }
    return z.front().tape->push(lse, p, d);
}

/// softmax(z / temperature), the same routine for teacher and student sides.
inline Vec softmax(std::span<const double> z, double temperature = 1.0) {
    const double lse = log_sum_exp(z, temperature);
    Vec p(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) p[i] = std::exp(z[i] / temperature - lse);
    return p;
}

inline Vec log_softmax(std::span<const double> z, double temperature = 1.0) {
    const double lse = log_sum_exp(z, temperature);
    Vec p(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) p[i] = z[i] / temperature - lse;
    return p;
}

/// KL(q || softmax(z / temperature)) for a fixed target distribution q.
///
/// The target enters with its log-probabilities so that a target produced by
/// the same logits yields exactly zero value and exactly zero partials.
inline double kl_to_logits(std::span<const double> q, std::span<const double> log_q,
                           std::span<const double> z, double temperature) {
    const Vec log_p = log_softmax(z, temperature);
    double kl = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i)
        if (q[i] > 0.0) kl += q[i] * (log_q[i] - log_p[i]);
    return kl;
}

inline Var kl_to_logits(std::span<const double> q, std::span<const double> log_q,
                        std::span<const Var> z, double temperature) {
    Vec zv(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) zv[i] = z[i].value();
    const double kl = kl_to_logits(q, log_q, zv, temperature);
    const Vec p = softmax(zv, temperature);
    std::vector<std::uint32_t> parents(z.size());
    Vec d(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        parents[i] = z[i].id;
        d[i] = (p[i] - q[i]) / temperature;
    }
    return z.front().tape->push(kl, parents, d);
}

} // namespace dualsft
