// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dualsft/error.hpp"
#include "dualsft/linalg.hpp"
#include "dualsft/surrogate.hpp"
#include "dualsft/tensor_core.hpp"
#include "dualsft/toy_models.hpp"

namespace dualsft {

inline constexpr std::size_t kMaxExplicitInteraction = std::size_t{1} << 24;

/**
 * N x D interaction matrix M^(order).
 *
 * Row n, column d holds eta (v_val)_d g_{n,d} minus the second-order
 * correction (eta^2 / 2) k_d g_{n,d}, where k = c . G for diag and k = H G for
 * full. Above the explicit-storage limit only the row and column sums are kept.
 */
struct InteractionMatrix {
    Order order = Order::first;
    double eta = 0.0;
    std::optional<Matrix> entries;
    Vec column_sums;
    Vec row_sums;

    bool is_explicit() const { return entries.has_value(); }
};

inline InteractionMatrix build_interaction(Order order, const PerSampleGradients& grads, std::span<const double> v_val,
                                           const Curvature& curvature, double eta,
                                           std::size_t explicit_limit = kMaxExplicitInteraction) {
    const std::size_t n_rows = grads.count();
    const std::size_t dim = grads.dim();
    require(v_val.size() == dim, "v_val length does not match the gradients");
    const Vec total = grads.total();

    Vec correction(dim, 0.0);
    if (order == Order::diag) {
        if (!curvature.diagonal) throw ConfigError("diag interaction needs a curvature vector");
        const Vec& c = *curvature.diagonal;
        require(c.size() == dim, "curvature length does not match the gradients");
        for (std::size_t d = 0; d < dim; ++d) correction[d] = c[d] * total[d];
    } else if (order == Order::full) {
        correction = curvature.apply_full(total);
    }
    const double half_eta2 = 0.5 * eta * eta;

    auto entry = [&](std::size_t n, std::size_t d) {
        const double g = grads.row(n)[d];
        const double m1 = eta * v_val[d] * g;
        return order == Order::first ? m1 : m1 - half_eta2 * correction[d] * g;
    };

    InteractionMatrix m;
    m.order = order;
    m.eta = eta;
    m.column_sums.assign(dim, 0.0);
    m.row_sums.assign(n_rows, 0.0);
    const bool keep = n_rows * dim <= explicit_limit;
    if (keep) m.entries = Matrix(n_rows, dim);
    for (std::size_t n = 0; n < n_rows; ++n) {
        double row = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
            const double e = entry(n, d);
            if (keep) (*m.entries)(n, d) = e;
            row += e;
            m.column_sums[d] += e;
        }
        m.row_sums[n] = row;
    }
    return m;
}

/// Parameter scores (length D) and data scores (length N).
struct ScorePair {
    Vec theta;
    Vec data;
    Order order = Order::diag;
};

inline ScorePair aggregate_scores(const InteractionMatrix& m) {
    return {m.column_sums, m.row_sums, m.order};
}

/// u = eta_sc (v_new + lambda v_prior) - (eta_sc^2 / 2) c_hat . G, with its inputs kept for audit.
struct ProjectionVector {
    Vec u;
    double eta_sc = 0.0;
    double lambda = 0.0;
    Vec v_new;
    Vec v_prior;
    Vec c_hat;
    Vec total_grad;
};

inline ProjectionVector build_projection(double eta_sc, std::span<const double> v_new, std::span<const double> v_prior,
                                         double lambda, std::span<const double> c_hat, std::span<const double> total_grad) {
    const std::size_t dim = v_new.size();
    if (!(eta_sc > 0.0)) throw ConfigError("scoring step must be positive");
    require(v_prior.size() == dim && c_hat.size() == dim && total_grad.size() == dim,
            "projection inputs have mismatched lengths");
    for (std::size_t d = 0; d < dim; ++d)
        if (!(c_hat[d] > 0.0))
            throw NumericError("curvature proxy entry " + std::to_string(d) + " is not positive");
    ProjectionVector p;
    p.eta_sc = eta_sc;
    p.lambda = lambda;
    p.v_new.assign(v_new.begin(), v_new.end());
    p.v_prior.assign(v_prior.begin(), v_prior.end());
    p.c_hat.assign(c_hat.begin(), c_hat.end());
    p.total_grad.assign(total_grad.begin(), total_grad.end());
    p.u.resize(dim);
    const double half_eta2 = 0.5 * eta_sc * eta_sc;
    for (std::size_t d = 0; d < dim; ++d)
        p.u[d] = eta_sc * (v_new[d] + lambda * v_prior[d]) - half_eta2 * c_hat[d] * total_grad[d];
    return p;
}

/// Rank-one scores: s_theta = u . G and s_data,n = <u, g_n>.
inline ScorePair practical_scores(std::span<const double> u, const PerSampleGradients& grads) {
    require(u.size() == grads.dim(), "u length does not match the gradients");
    ScorePair s;
    s.order = Order::diag;
    s.theta = hadamard(u, grads.total());
    s.data.resize(grads.count());
    for (std::size_t n = 0; n < grads.count(); ++n) s.data[n] = dot(u, grads.row(n));
    return s;
}

/// Data score of one example from its ghost tape: sum over layers and rows of eps^T U a (+ eps^T u_bias).
inline double ghost_dot(std::span<const double> u, const ToyModel& model, const ExampleTape& tape) {
    const auto& layers = model.layers();
    if (tape.layers.size() != layers.size())
        throw ConfigError("ghost tape is missing layers: expected " + std::to_string(layers.size()) + ", got " +
                          std::to_string(tape.layers.size()));
    require(u.size() == model.dim(), "u length does not match the model");
    double s = 0.0;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const AffineLayer& L = layers[l];
        for (const GhostRow& row : tape.layers[l]) {
            for (std::size_t o = 0; o < L.out; ++o) {
                const double ua = dot(u.subspan(L.weight_offset + o * L.in, L.in), row.activation);
                s += row.preact_grad[o] * (L.has_bias ? ua + u[L.bias_offset + o] : ua);
            }
        }
    }
    return s;
}

inline Vec ghost_dot(std::span<const double> u, const ToyModel& model, const GhostTapes& tapes) {
    Vec out(tapes.size());
    for (std::size_t n = 0; n < tapes.size(); ++n) out[n] = ghost_dot(u, model, tapes[n]);
    return out;
}

/// Order of indices by descending signed score, ties by ascending index.
inline std::vector<std::size_t> signed_ranking(std::span<const double> scores) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return idx;
}

/// Indices of the `budget` largest signed scores, returned sorted.
inline Selection topk_signed(std::span<const double> scores, std::size_t budget, Side side = Side::data) {
    require(budget <= scores.size(), "budget exceeds the number of candidates");
    auto ranking = signed_ranking(scores);
    ranking.resize(budget);
    return Selection::make(side, std::move(ranking), scores.size());
}

/// Budget as a count: ceil(fraction * n), guarded against products like 0.1 * 100 rounding above 10.
inline std::size_t budget_count(double fraction, std::size_t n) {
    require(fraction >= 0.0 && fraction <= 1.0, "budget fraction must be in [0, 1]");
    const double raw = fraction * static_cast<double>(n);
    const double nearest = std::round(raw);
    const double c = std::abs(raw - nearest) <= 1e-9 * std::max(1.0, raw) ? nearest : std::ceil(raw);
    return std::min(n, static_cast<std::size_t>(c));
}

inline void write_scores_csv(const std::filesystem::path& path, std::span<const double> scores) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
    out << "index,score\n";
    for (std::size_t i = 0; i < scores.size(); ++i) out << i << ',' << format_double(scores[i]) << '\n';
    if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

} // namespace dualsft
