// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/fixtures.hpp"

using namespace dualsft;
using namespace dualsft::testing;

namespace {

Vec positive_vec(std::mt19937_64& rng, std::size_t n) {
    Vec c = random_vec(rng, n);
    for (double& x : c) x = std::abs(x) + 0.1;
    return c;
}

std::vector<std::size_t> iota_players(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    return p;
}

} // namespace

TEST(ExactShapley, AdditiveGameReturnsWeights) {
    const Vec a = {0.5, -1.25, 3.0, 0.0, 2.5};
    SurrogateGame game{5, [&](std::uint32_t s) {
                           double u = 0.0;
                           for (std::size_t i = 0; i < 5; ++i)
                               if (s & (1u << i)) u += a[i];
                           return u;
                       }};
    const Vec phi = exact_shapley(game);
    for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(phi[i], a[i], 1e-15);
}

TEST(ExactShapley, SymmetricPlayersShareEqually) {
    SurrogateGame game{2, [](std::uint32_t s) {
                           if (s == 3) return 5.0;
                           return s == 0 ? 0.0 : 2.0;
                       }};
    const Vec phi = exact_shapley(game);
    EXPECT_EQ(phi[0], phi[1]);
    EXPECT_DOUBLE_EQ(phi[0] + phi[1], 5.0);
}

TEST(ExactShapley, MatchesPermutationAverageOnDiagGame) {
    std::mt19937_64 rng(1);
    const auto grads = random_grads(rng, 3, 4);
    const Vec v = random_vec(rng, 4);
    SurrogateInstance inst{grads, v, Curvature::diag(positive_vec(rng, 4))};
    const auto game = make_surrogate_game(Side::data, Order::diag, inst, 0.4);
    const Vec phi = exact_shapley(game);
    const Vec perm = permutation_shapley(3, game.utility);
    EXPECT_LE(max_abs_diff(phi, perm), 1e-14);
}

TEST(ExactShapley, MatchesPermutationAverageOnArbitraryGames) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> normal;
    for (std::size_t p = 1; p <= 6; ++p) {
        Vec table(std::size_t{1} << p);
        for (double& x : table) x = normal(rng);
        table[0] = 0.0;
        SurrogateGame game{p, [&](std::uint32_t s) { return table[s]; }};
        EXPECT_LE(max_abs_diff(exact_shapley(game), permutation_shapley(p, game.utility)), 1e-13) << p;
    }
}

TEST(ExactShapley, RefusesTooManyPlayers) {
    SurrogateGame game{kMaxExactPlayers + 1, [](std::uint32_t) { return 0.0; }};
    EXPECT_THROW(exact_shapley(game), ConfigError);
}

TEST(ExactShapley, EmptyGame) {
    SurrogateGame game{0, [](std::uint32_t) { return 0.0; }};
    EXPECT_TRUE(exact_shapley(game).empty());
    EXPECT_EQ(efficiency_check(game, Vec{}), 0.0);
}

TEST(ClosedFormShapley, FirstOrderDeviationIsRoundoff) {
    std::mt19937_64 rng(3);
    const auto grads = random_grads(rng, 6, 7);
    const Vec v = random_vec(rng, 7);
    for (Side side : {Side::data, Side::parameter}) {
        const auto players = iota_players(6);
        const auto check = verify_closed_form(Order::first, side, players, grads, v, Curvature::none(), 0.2);
        EXPECT_LE(check.max_deviation, 1e-14);
    }
}

TEST(ClosedFormShapley, DiagDataGameFiveBySix) {
    std::mt19937_64 rng(4);
    const auto grads = random_grads(rng, 5, 6);
    const Vec v = random_vec(rng, 6);
    const auto check = verify_closed_form(Order::diag, Side::data, iota_players(5), grads, v,
                                       Curvature::diag(positive_vec(rng, 6)), 0.3);
    EXPECT_LE(check.max_deviation, 1e-10);
    EXPECT_LE(check.efficiency_residual, 1e-10);
    EXPECT_EQ(check.shapley.size(), 5u);
}

TEST(ClosedFormShapley, FullParameterGameSixCoordinates) {
    std::mt19937_64 rng(5);
    const auto grads = random_grads(rng, 4, 6);
    const Vec v = random_vec(rng, 6);
    const auto check = verify_closed_form(Order::full, Side::parameter, iota_players(6), grads, v,
                                       Curvature::full(random_symmetric(rng, 6)), 0.3);
    EXPECT_LE(check.max_deviation, 1e-10);
    EXPECT_LE(check.efficiency_residual, 1e-10);
}

TEST(ClosedFormShapley, RestrictedPlayersFromLargerInstance) {
    std::mt19937_64 rng(6);
    const auto grads = random_grads(rng, 12, 10);
    const Vec v = random_vec(rng, 10);
    Curvature curv = Curvature::full(random_symmetric(rng, 10));
    curv.diagonal = positive_vec(rng, 10);
    const std::vector<std::size_t> players = {9, 2, 5, 7};
    for (Order o : {Order::first, Order::diag, Order::full})
        for (Side side : {Side::data, Side::parameter}) {
            const auto check = verify_closed_form(o, side, players, grads, v, curv, 0.1);
            EXPECT_LE(check.max_deviation, 1e-10);
            EXPECT_LE(check.efficiency_residual, 1e-10);
        }
    EXPECT_THROW(verify_closed_form(Order::first, Side::data, iota_players(9), grads, v, curv, 0.1), ConfigError);
}

TEST(RestrictInstance, ParameterSideNeedsDenseHessian) {
    std::mt19937_64 rng(7);
    const auto grads = random_grads(rng, 3, 4);
    const auto hvp_only = Curvature::from_hvp([](std::span<const double> x) { return Vec(x.begin(), x.end()); });
    const std::vector<std::size_t> players = {0, 1};
    EXPECT_THROW(restrict_instance(Side::parameter, players, grads, Vec(4, 1.0), hvp_only), ConfigError);
    EXPECT_NO_THROW(restrict_instance(Side::data, players, grads, Vec(4, 1.0), hvp_only));
}

TEST(RestrictInstance, ParameterSideSlicesColumnsAndCurvature) {
    std::mt19937_64 rng(8);
    const auto grads = random_grads(rng, 3, 5);
    const Vec v = random_vec(rng, 5);
    Curvature curv = Curvature::full(random_symmetric(rng, 5));
    curv.diagonal = positive_vec(rng, 5);
    const std::vector<std::size_t> players = {4, 1};
    const auto inst = restrict_instance(Side::parameter, players, grads, v, curv);
    EXPECT_EQ(inst.grads.dim(), 2u);
    EXPECT_EQ(inst.grads.rows(2, 0), grads.rows(2, 4));
    EXPECT_EQ(inst.v_val, (Vec{v[4], v[1]}));
    EXPECT_EQ((*inst.curvature.diagonal)[1], (*curv.diagonal)[1]);
    EXPECT_EQ((*inst.curvature.hessian)(0, 1), (*curv.hessian)(4, 1));
}

TEST(Precedence, HalfOfAllOrderings) {
    for (std::size_t p = 2; p <= 6; ++p) {
        const auto [before, total] = precedence_count(p, 0, p - 1);
        EXPECT_EQ(2 * before, total);
    }
    const auto [b, t] = precedence_count(4, 1, 2);
    EXPECT_EQ(t, 24u);
    EXPECT_EQ(b, 12u);
}
