// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "dualsft/error.hpp"
#include "dualsft/linalg.hpp"
#include "dualsft/scoring.hpp"
#include "dualsft/surrogate.hpp"
#include "dualsft/tensor_core.hpp"

namespace dualsft {

inline constexpr std::size_t kMaxExactPlayers = 10;

/// Cooperative game over players 0..P-1; coalitions are bitmasks.
struct SurrogateGame {
    std::size_t players = 0;
    std::function<double(std::uint32_t)> utility;
};

inline std::vector<std::size_t> coalition_members(std::uint32_t mask, std::span<const std::size_t> labels) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < labels.size(); ++i)
        if (mask & (std::uint32_t{1} << i)) out.push_back(labels[i]);
    return out;
}

/**
 * Exact Shapley values by subset enumeration:
 *
 *     phi_i = sum_{S subset of P \ {i}} |S|! (P - |S| - 1)! / P! [U(S + i) - U(S)]
 *
 * Every coalition utility is evaluated once and memoized.
 */
inline Vec exact_shapley(const SurrogateGame& game) {
    const std::size_t p = game.players;
    if (p > kMaxExactPlayers)
        throw ConfigError("exact Shapley enumeration supports at most " + std::to_string(kMaxExactPlayers) +
                          " players, got " + std::to_string(p));
    if (p == 0) return {};
    const std::uint32_t full = (std::uint32_t{1} << p) - 1;
    Vec u(std::size_t{full} + 1);
    for (std::uint32_t s = 0; s <= full; ++s) u[s] = game.utility(s);

    Vec fact(p + 1, 1.0);
    for (std::size_t k = 1; k <= p; ++k) fact[k] = fact[k - 1] * static_cast<double>(k);
    Vec weight(p);
    for (std::size_t s = 0; s < p; ++s) weight[s] = fact[s] * fact[p - s - 1] / fact[p];

    Vec phi(p, 0.0);
    for (std::size_t i = 0; i < p; ++i) {
        const std::uint32_t bit = std::uint32_t{1} << i;
        for (std::uint32_t s = 0; s <= full; ++s) {
            if (s & bit) continue;
            phi[i] += weight[static_cast<std::size_t>(std::popcount(s))] * (u[s | bit] - u[s]);
        }
    }
    return phi;
}

/// |sum_i scores_i - U(grand coalition)|.
inline double efficiency_check(const SurrogateGame& game, std::span<const double> scores) {
    if (game.players == 0) return std::abs(sum(scores));
    const std::uint32_t full = (std::uint32_t{1} << game.players) - 1;
    return std::abs(sum(scores) - game.utility(full));
}

/// Gradients, validation direction and curvature restricted to a player subset.
struct SurrogateInstance {
    PerSampleGradients grads;
    Vec v_val;
    Curvature curvature;
};

/**
 * Restricts an instance to `players` on one side. On the data side the rows
 * are subsampled; on the parameter side the columns, v_val and curvature are.
 * Truncated utilities restrict cleanly, so the result is itself a valid game.
 */
inline SurrogateInstance restrict_instance(Side side, std::span<const std::size_t> players,
                                           const PerSampleGradients& grads, std::span<const double> v_val,
                                           const Curvature& curvature) {
    SurrogateInstance out;
    if (side == Side::data) {
        out.grads.rows = Matrix(players.size(), grads.dim());
        for (std::size_t i = 0; i < players.size(); ++i) {
            auto src = grads.row(players[i]);
            std::copy(src.begin(), src.end(), out.grads.rows.row(i).begin());
        }
        out.v_val.assign(v_val.begin(), v_val.end());
        out.curvature = curvature;
        return out;
    }
    out.grads.rows = Matrix(grads.count(), players.size());
    for (std::size_t n = 0; n < grads.count(); ++n)
        for (std::size_t i = 0; i < players.size(); ++i) out.grads.rows(n, i) = grads.row(n)[players[i]];
    out.v_val.resize(players.size());
    for (std::size_t i = 0; i < players.size(); ++i) out.v_val[i] = v_val[players[i]];
    if (curvature.diagonal) {
        Vec c(players.size());
        for (std::size_t i = 0; i < players.size(); ++i) c[i] = (*curvature.diagonal)[players[i]];
        out.curvature.diagonal = std::move(c);
    }
    if (curvature.hessian) {
        Matrix h(players.size(), players.size());
        for (std::size_t i = 0; i < players.size(); ++i)
            for (std::size_t j = 0; j < players.size(); ++j) h(i, j) = (*curvature.hessian)(players[i], players[j]);
        out.curvature.hessian = std::move(h);
    } else if (curvature.hvp) {
        throw ConfigError("restricting a parameter game needs a dense Hessian, not an hvp");
    }
    return out;
}

/// Game whose utility is the order-alpha Taylor truncation of the one-step validation gain.
inline SurrogateGame make_surrogate_game(Side side, Order order, const SurrogateInstance& inst, double eta) {
    const std::size_t p = side == Side::data ? inst.grads.count() : inst.grads.dim();
    std::vector<std::size_t> labels(p);
    std::iota(labels.begin(), labels.end(), std::size_t{0});
    return {p, [=](std::uint32_t mask) {
                Selection sel{side, coalition_members(mask, labels)};
                return taylor_utility(sel, order, inst.v_val, inst.curvature, inst.grads, eta);
            }};
}

/// Closed-form scores of the restricted instance: column sums (parameter side) or row sums (data side).
inline Vec closed_form_scores(Side side, Order order, const SurrogateInstance& inst, double eta) {
    const ScorePair s = aggregate_scores(build_interaction(order, inst.grads, inst.v_val, inst.curvature, eta));
    return side == Side::data ? s.data : s.theta;
}

struct ClosedFormCheck {
    Vec shapley;
    Vec closed_form;
    double max_deviation = 0.0;
    double efficiency_residual = 0.0;
};

/// Compares exact Shapley values of the restricted surrogate game with the closed-form scores.
inline ClosedFormCheck verify_closed_form(Order order, Side side, std::span<const std::size_t> players,
                                    const PerSampleGradients& grads, std::span<const double> v_val,
                                    const Curvature& curvature, double eta) {
    require(players.size() <= 8, "closed-form check uses at most 8 players");
    const SurrogateInstance inst = restrict_instance(side, players, grads, v_val, curvature);
    const SurrogateGame game = make_surrogate_game(side, order, inst, eta);
    ClosedFormCheck out;
    out.shapley = exact_shapley(game);
    out.closed_form = closed_form_scores(side, order, inst, eta);
    for (std::size_t i = 0; i < out.shapley.size(); ++i)
        out.max_deviation = std::max(out.max_deviation, std::abs(out.shapley[i] - out.closed_form[i]));
    out.efficiency_residual = efficiency_check(game, out.closed_form);
    return out;
}

/// Number of the P! orderings that place player j before player i, and P!.
inline std::pair<std::uint64_t, std::uint64_t> precedence_count(std::size_t players, std::size_t i, std::size_t j) {
    std::vector<std::size_t> perm(players);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::uint64_t before = 0, total = 0;
    do {
        const auto pi = std::find(perm.begin(), perm.end(), i);
        const auto pj = std::find(perm.begin(), perm.end(), j);
        if (pj < pi) ++before;
        ++total;
    } while (std::next_permutation(perm.begin(), perm.end()));
    return {before, total};
}

} // namespace dualsft
