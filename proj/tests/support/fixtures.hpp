// SPDX-License-Identifier: Apache-2.0
#pragma once

// Seeded random instances and independent reference computations shared by
// the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "dualsft/dualsft.hpp"

namespace dualsft::testing {

inline Vec random_vec(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
    std::normal_distribution<double> normal(0.0, scale);
    Vec v(n);
    for (double& x : v) x = normal(rng);
    return v;
}

inline Matrix random_matrix(std::mt19937_64& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    Matrix m(rows, cols);
    std::normal_distribution<double> normal(0.0, scale);
    for (double& x : m.data()) x = normal(rng);
    return m;
}

inline Matrix random_symmetric(std::mt19937_64& rng, std::size_t n, double scale = 1.0) {
    Matrix m = random_matrix(rng, n, n, scale);
    symmetrize(m);
    return m;
}

/// B^T B / n + shift * I.
inline Matrix random_spd(std::mt19937_64& rng, std::size_t n, double shift = 0.5) {
    const Matrix b = random_matrix(rng, n, n);
    Matrix a(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k) s += b(k, i) * b(k, j);
            a(i, j) = s / static_cast<double>(n) + (i == j ? shift : 0.0);
        }
    return a;
}

inline PerSampleGradients random_grads(std::mt19937_64& rng, std::size_t n, std::size_t dim, double scale = 1.0) {
    return {random_matrix(rng, n, dim, scale), "random"};
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

/// max_i |a_i - b_i| / max(|b|_inf, tiny).
inline double max_rel_diff(std::span<const double> a, std::span<const double> b) {
    return max_abs_diff(a, b) / std::max(norm_inf(b), 1e-300);
}

/// Per-coordinate relative error |a - b| / max(|b|, floor), maximized.
inline double max_coord_rel(std::span<const double> a, std::span<const double> b, double floor = 1e-6) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a[i] - b[i]) / std::max(std::abs(b[i]), floor));
    return m;
}

/// 1/2 theta^T A theta + b^T theta.
struct Quadratic {
    Matrix a;
    Vec b;

    template <class T>
    T operator()(std::span<const T> p) const {
        std::vector<T> ap;
        ap.reserve(b.size());
        for (std::size_t i = 0; i < b.size(); ++i) ap.push_back(linear(p, a.row(i)));
        return 0.5 * linear(p, std::span<const T>(ap)) + linear(p, std::span<const double>(b));
    }
    Vec grad(std::span<const double> p) const {
        Vec g = matvec(a, p);
        axpy(1.0, b, g);
        return g;
    }
};

// ---------------------------------------------------------------- toy data

inline std::vector<Example> classification_batch(std::mt19937_64& rng, std::size_t n, std::size_t dim,
                                                 std::size_t classes) {
    std::uniform_int_distribution<int> label(0, static_cast<int>(classes) - 1);
    std::vector<Example> out(n);
    for (auto& ex : out) {
        ex.x = random_vec(rng, dim);
        ex.y = label(rng);
    }
    return out;
}

inline std::vector<Example> regression_batch(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
    std::uniform_real_distribution<double> curv(0.5, 2.0);
    std::normal_distribution<double> normal;
    std::vector<Example> out(n);
    for (auto& ex : out) {
        ex.x = random_vec(rng, dim);
        ex.target = normal(rng);
        ex.curvature = curv(rng);
    }
    return out;
}

/// Random sequences over tokens 1..vocab-1 with occasional trailing padding.
inline std::vector<Example> lm_batch(std::mt19937_64& rng, std::size_t n, std::size_t vocab, std::size_t len) {
    std::uniform_int_distribution<int> tok(1, static_cast<int>(vocab) - 1);
    std::uniform_int_distribution<int> start(1, 3);
    std::uniform_int_distribution<int> pad(0, 2);
    std::vector<Example> out(n);
    for (auto& ex : out) {
        ex.tokens.resize(len);
        for (int& t : ex.tokens) t = tok(rng);
        ex.response_start = start(rng);
        const int p = pad(rng);
        for (int i = 0; i < p; ++i) ex.tokens[len - 1 - static_cast<std::size_t>(i)] = kPadToken;
    }
    return out;
}

enum class ToyKind { logistic, mlp, lm, quadratic };

inline const char* toy_name(ToyKind k) {
    switch (k) {
    case ToyKind::logistic: return "softmax_classifier";
    case ToyKind::mlp: return "mlp";
    case ToyKind::lm: return "tiny_causal_lm";
    case ToyKind::quadratic: return "quadratic_regression";
    }
    return "?";
}

inline ToyModel make_toy_model(ToyKind kind, std::uint64_t seed) {
    switch (kind) {
    case ToyKind::logistic: return ToyModel::softmax_classifier(5, 3, seed);
    case ToyKind::mlp: return ToyModel::mlp(4, 5, 3, seed);
    case ToyKind::lm: return ToyModel::tiny_causal_lm(6, 3, seed);
    case ToyKind::quadratic: return ToyModel::quadratic_regression(6, seed);
    }
    return ToyModel::softmax_classifier(5, 3, seed);
}

inline std::vector<Example> toy_batch(ToyKind kind, const ToyModel& model, std::mt19937_64& rng, std::size_t n) {
    switch (kind) {
    case ToyKind::lm: return lm_batch(rng, n, model.output_dim(), 8);
    case ToyKind::quadratic: return regression_batch(rng, n, model.input_dim());
    default: return classification_batch(rng, n, model.input_dim(), model.output_dim());
    }
}

/// A model at a perturbed point with a training batch and a validation set.
struct ToyInstance {
    ToyKind kind;
    ToyModel model;
    std::vector<Example> train;
    std::vector<Example> val;
    ParameterVector point;

    /// Mean validation loss, generic over the scalar type.
    auto objective() const {
        return [this](auto p) { return batch_loss(model, p, std::span<const Example>(val)); };
    }
    PerSampleGradients grads() const {
        return per_sample_grads([this](auto p, const Example& ex) { return model.loss(p, ex); },
                                std::span<const Example>(train), point, "point");
    }
    Vec v_val() const { return gradient(objective(), point).values(); }
};

inline ToyInstance make_toy_instance(ToyKind kind, std::uint64_t seed, std::size_t n_train = 6,
                                     std::size_t n_val = 10) {
    std::mt19937_64 rng(seed);
    ToyModel model = make_toy_model(kind, seed ^ 0x9e3779b97f4a7c15ULL);
    auto train = toy_batch(kind, model, rng, n_train);
    auto val = toy_batch(kind, model, rng, n_val);
    Vec p = model.params().values();
    axpy(1.0, random_vec(rng, p.size(), 0.3), p);
    ParameterVector point = model.params().with_values(std::move(p));
    return {kind, std::move(model), std::move(train), std::move(val), std::move(point)};
}

// ---------------------------------------------------------------- reference implementations

/// Shapley values by averaging marginal contributions over all P! orderings.
inline Vec permutation_shapley(std::size_t players, const std::function<double(std::uint32_t)>& utility) {
    std::vector<std::size_t> perm(players);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    Vec phi(players, 0.0);
    double count = 0.0;
    do {
        std::uint32_t s = 0;
        double prev = utility(0);
        for (std::size_t i : perm) {
            s |= std::uint32_t{1} << i;
            const double cur = utility(s);
            phi[i] += cur - prev;
            prev = cur;
        }
        count += 1.0;
    } while (std::next_permutation(perm.begin(), perm.end()));
    for (double& v : phi) v /= count;
    return phi;
}

/// Softmax cross-entropy written out directly.
inline double reference_cross_entropy(std::span<const double> z, std::size_t label) {
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return std::log(s) + m - z[label];
}

inline Vec reference_softmax(std::span<const double> z, double tau) {
    Vec p(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += std::exp(z[i] / tau);
    for (std::size_t i = 0; i < z.size(); ++i) p[i] = std::exp(z[i] / tau) / s;
    return p;
}

inline double reference_kl(std::span<const double> q, std::span<const double> p) {
    double s = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i)
        if (q[i] > 0.0) s += q[i] * std::log(q[i] / p[i]);
    return s;
}

/// Step sizes 0.3 * 10^{-i/3} / ||G||, i = 0..6, spanning two decades.
inline Vec scan_etas(std::span<const double> total) {
    const double g = norm2(total);
    Vec etas;
    for (int i = 0; i < 7; ++i) etas.push_back(0.3 * std::pow(10.0, -i / 3.0) / g);
    return etas;
}

} // namespace dualsft::testing
