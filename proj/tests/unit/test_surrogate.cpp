// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/fixtures.hpp"

using namespace dualsft;
using namespace dualsft::testing;

namespace {

Selection random_subset(std::mt19937_64& rng, Side side, std::size_t universe, double keep = 0.5) {
    std::bernoulli_distribution coin(keep);
    std::vector<std::size_t> m;
    for (std::size_t i = 0; i < universe; ++i)
        if (coin(rng)) m.push_back(i);
    return Selection::make(side, m, universe);
}

} // namespace

TEST(SelectionTest, MakeSortsAndValidates) {
    const auto s = Selection::make(Side::data, {4, 0, 2}, 5);
    EXPECT_EQ(s.members, (std::vector<std::size_t>{0, 2, 4}));
    EXPECT_TRUE(s.contains(2));
    EXPECT_FALSE(s.contains(3));
    EXPECT_EQ(s.indicator(5), (Vec{1, 0, 1, 0, 1}));
    EXPECT_THROW(Selection::make(Side::data, {1, 1}, 5), ConfigError);
    EXPECT_THROW(Selection::make(Side::data, {5}, 5), ConfigError);
    EXPECT_EQ(Selection::all(Side::parameter, 3).members, (std::vector<std::size_t>{0, 1, 2}));
}

TEST(OneStepUpdate, EmptySelectionIsZero) {
    std::mt19937_64 rng(1);
    const auto grads = random_grads(rng, 4, 3);
    for (Side side : {Side::data, Side::parameter})
        for (double v : one_step_update(Selection{side, {}}, grads, 0.1)) EXPECT_EQ(v, 0.0);
}

TEST(OneStepUpdate, FullSelectionsOnBothSidesGiveMinusEtaG) {
    std::mt19937_64 rng(2);
    const auto grads = random_grads(rng, 5, 4);
    const Vec g = grads.total();
    const Vec p = one_step_update(Selection::all(Side::parameter, 4), grads, 0.3);
    const Vec d = one_step_update(Selection::all(Side::data, 5), grads, 0.3);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(p[i], -0.3 * g[i]);
    EXPECT_EQ(p, d);
}

TEST(OneStepUpdate, ParameterMaskZeroesFrozenCoordinates) {
    std::mt19937_64 rng(3);
    const auto grads = random_grads(rng, 3, 5);
    const Vec g = grads.total();
    const Vec p = one_step_update(Selection::make(Side::parameter, {1, 3}, 5), grads, 2.0);
    EXPECT_EQ(p, (Vec{0.0, -2.0 * g[1], 0.0, -2.0 * g[3], 0.0}));
}

TEST(ExactStepUtility, EmptySetOrZeroStepIsExactlyZero) {
    std::mt19937_64 rng(4);
    const Quadratic q{random_spd(rng, 3), random_vec(rng, 3)};
    const auto grads = random_grads(rng, 4, 3);
    const Vec x = random_vec(rng, 3);
    EXPECT_EQ(exact_step_utility(Selection{Side::data, {}}, q, x, grads, 0.1), 0.0);
    EXPECT_EQ(exact_step_utility(Selection::all(Side::data, 4), q, x, grads, 0.0), 0.0);
}

TEST(ExactStepUtility, ConvexQuadraticDescentMatchesAnalyticGain) {
    std::mt19937_64 rng(5);
    const std::size_t dim = 5;
    const Quadratic q{random_spd(rng, dim), random_vec(rng, dim)};
    const Vec x = random_vec(rng, dim);
    // Split the objective gradient over three rows so that G = grad L(x).
    const Vec g = q.grad(x);
    PerSampleGradients grads{Matrix(3, dim), "q"};
    for (std::size_t d = 0; d < dim; ++d) {
        grads.rows(0, d) = 0.5 * g[d];
        grads.rows(1, d) = 0.25 * g[d];
        grads.rows(2, d) = 0.25 * g[d];
    }
    const double eta = 0.05;
    const double u = exact_step_utility(Selection::all(Side::data, 3), q, x, grads, eta);
    const double analytic = eta * dot(g, g) - 0.5 * eta * eta * dot(g, matvec(q.a, g));
    EXPECT_GT(u, 0.0);
    EXPECT_NEAR(u, analytic, 1e-12 * std::max(1.0, std::abs(analytic)));
}

TEST(TaylorUtility, FullOrderIsExactOnQuadratics) {
    std::mt19937_64 rng(6);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t dim = 6;
        const Quadratic q{random_symmetric(rng, dim), random_vec(rng, dim)};
        const Vec x = random_vec(rng, dim);
        const auto grads = random_grads(rng, 5, dim);
        const Vec v = q.grad(x);
        const Curvature h = Curvature::full(q.a);
        for (Side side : {Side::data, Side::parameter}) {
            const Selection sel = random_subset(rng, side, side == Side::data ? 5 : dim);
            for (double eta : {1e-3, 0.1, 1.0}) {
                const double exact = exact_step_utility(sel, q, x, grads, eta);
                const double t2 = taylor_utility(sel, Order::full, v, h, grads, eta);
                EXPECT_NEAR(t2, exact, 1e-12 * std::max(1.0, std::abs(exact)));
            }
        }
    }
}

TEST(TaylorUtility, MissingCurvatureIsAConfigError) {
    std::mt19937_64 rng(7);
    const auto grads = random_grads(rng, 2, 3);
    const Vec v(3, 1.0);
    const auto sel = Selection::all(Side::data, 2);
    EXPECT_THROW(taylor_utility(sel, Order::diag, v, Curvature::none(), grads, 0.1), ConfigError);
    EXPECT_THROW(taylor_utility(sel, Order::full, v, Curvature::none(), grads, 0.1), ConfigError);
    EXPECT_NO_THROW(taylor_utility(sel, Order::first, v, Curvature::none(), grads, 0.1));
    EXPECT_THROW(parse_order("third"), ConfigError);
}

TEST(TaylorUtility, DiagAndHvpTruncationsMatchHandFormulas) {
    std::mt19937_64 rng(8);
    const auto grads = random_grads(rng, 3, 4);
    const Vec v = random_vec(rng, 4);
    Vec c = random_vec(rng, 4);
    for (double& x : c) x = std::abs(x);
    const Matrix h = random_symmetric(rng, 4);
    const auto sel = Selection::make(Side::data, {0, 2}, 3);
    const double eta = 0.2;
    const Vec step = one_step_update(sel, grads, eta);
    double quad = 0.0;
    for (std::size_t d = 0; d < 4; ++d) quad += c[d] * step[d] * step[d];
    EXPECT_NEAR(taylor_utility(sel, Order::diag, v, Curvature::diag(c), grads, eta), -dot(v, step) - 0.5 * quad, 1e-14);
    const auto via_hvp = Curvature::from_hvp([&](std::span<const double> x) { return matvec(h, x); });
    EXPECT_NEAR(taylor_utility(sel, Order::full, v, via_hvp, grads, eta),
                taylor_utility(sel, Order::full, v, Curvature::full(h), grads, eta), 1e-14);
}

TEST(TaylorUtility, FirstOrderErrorWithinSmoothnessBound) {
    const auto inst = make_toy_instance(ToyKind::logistic, 12, 8);
    const auto obj = inst.objective();
    const auto grads = inst.grads();
    const Vec v = inst.v_val();
    auto grad_fn = [&](std::span<const double> x) { return gradient(obj, inst.point.with_values(Vec(x.begin(), x.end()))).values(); };
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const Selection sel = random_subset(rng, Side::data, 8);
        if (sel.members.empty()) continue;
        for (double eta : {0.01, 0.1, 0.5}) {
            const Vec step = one_step_update(sel, grads, eta);
            const double beta = estimate_smoothness(grad_fn, inst.point.values(), step, 100 + trial);
            const double err = std::abs(exact_step_utility(sel, obj, inst.point.values(), grads, eta) -
                                        taylor_utility(sel, Order::first, v, Curvature::none(), grads, eta));
            const Vec gs = grads.subset_sum(sel.members);
            EXPECT_LE(err, 0.5 * beta * eta * eta * dot(gs, gs) * (1.0 + 1e-9));
        }
    }
}

TEST(SlopeFit, RecoversPowerLawAndReportsDegenerateCases) {
    const Vec etas = {1e-1, 1e-2, 1e-3, 1e-4};
    Vec errs;
    for (double e : etas) errs.push_back(3.0 * e * e * e);
    const auto fit = fit_loglog_slope(etas, errs);
    EXPECT_EQ(fit.status, SlopeFit::Status::fitted);
    EXPECT_NEAR(fit.slope, 3.0, 1e-9);
    EXPECT_EQ(fit.points_used, 4u);
    EXPECT_EQ(fit_loglog_slope(etas, Vec(4, 1e-16)).status, SlopeFit::Status::exact);
    EXPECT_EQ(fit_loglog_slope(etas, Vec{1e-3, 1e-4, 0.0, 0.0}).status, SlopeFit::Status::inconclusive);
    EXPECT_EQ(to_string(SlopeFit::Status::inconclusive), "inconclusive");
}

TEST(TruncationScan, LogisticFirstOrderSlopeIsTwo) {
    const auto inst = make_toy_instance(ToyKind::logistic, 13, 16);
    const auto obj = inst.objective();
    const auto grads = inst.grads();
    const auto h = Curvature::full(dense_hessian(obj, inst.point).entries);
    const auto scan = truncation_scan(Selection::all(Side::data, 16), obj, inst.point.values(), grads, inst.v_val(), h,
                                      scan_etas(grads.total()));
    ASSERT_EQ(scan.first.status, SlopeFit::Status::fitted);
    EXPECT_GE(scan.first.slope, 1.7);
    EXPECT_LE(scan.first.slope, 2.3);
    EXPECT_EQ(scan.step_utility.size(), 7u);
}

TEST(TruncationScan, MlpSecondOrderSlopeIsThree) {
    const auto inst = make_toy_instance(ToyKind::mlp, 14, 16);
    const auto obj = inst.objective();
    const auto grads = inst.grads();
    const auto h = Curvature::full(dense_hessian(obj, inst.point).entries);
    const auto scan = truncation_scan(Selection::all(Side::data, 16), obj, inst.point.values(), grads, inst.v_val(), h,
                                      scan_etas(grads.total()));
    ASSERT_EQ(scan.second.status, SlopeFit::Status::fitted);
    EXPECT_GE(scan.second.slope, 2.6);
    EXPECT_LE(scan.second.slope, 3.4);
    EXPECT_GE(scan.first.slope, 1.7);
    EXPECT_LE(scan.first.slope, 2.3);
}

TEST(TruncationScan, QuadraticSecondOrderErrorIsAtFloor) {
    std::mt19937_64 rng(15);
    const std::size_t dim = 5;
    const Quadratic q{random_spd(rng, dim), random_vec(rng, dim)};
    const Vec x = random_vec(rng, dim);
    const auto grads = random_grads(rng, 6, dim);
    const auto scan = truncation_scan(Selection::all(Side::data, 6), q, x, grads, q.grad(x), Curvature::full(q.a),
                                      scan_etas(grads.total()));
    for (double e : scan.second_error) EXPECT_LE(e, 1e-12);
    EXPECT_NE(scan.second.status, SlopeFit::Status::fitted);
}

TEST(TruncationScan, RejectsNarrowStepRanges) {
    std::mt19937_64 rng(16);
    const Quadratic q{random_spd(rng, 2), random_vec(rng, 2)};
    const auto grads = random_grads(rng, 2, 2);
    const Vec x(2, 0.0);
    const auto sel = Selection::all(Side::data, 2);
    EXPECT_THROW(truncation_scan(sel, q, x, grads, q.grad(x), Curvature::full(q.a), Vec{1e-1, 1e-2, 1e-3}), ConfigError);
    EXPECT_THROW(truncation_scan(sel, q, x, grads, q.grad(x), Curvature::full(q.a), Vec{1e-1, 5e-2, 2e-2, 1e-2}),
                 ConfigError);
}

TEST(Smoothness, QuadraticEstimateIsBoundedByLargestEigenvalue) {
    Matrix a(3, 3);
    a(0, 0) = 4.0;
    a(1, 1) = 1.0;
    a(2, 2) = 0.5;
    const Quadratic q{a, Vec(3, 0.0)};
    auto grad = [&](std::span<const double> x) { return q.grad(x); };
    const double beta = estimate_smoothness(grad, Vec{1.0, 1.0, 1.0}, Vec{0.5, -0.2, 0.1}, 3);
    EXPECT_LE(beta, 4.0 + 1e-12);
    EXPECT_GE(beta, 0.5 - 1e-12);
    EXPECT_EQ(estimate_smoothness(grad, Vec{1.0, 1.0, 1.0}, Vec(3, 0.0), 3), 0.0);
}

TEST(CoordinationGap, FullMaskAndFullSubsetGiveZeroGaps) {
    std::mt19937_64 rng(17);
    const auto grads = random_grads(rng, 6, 5);
    const Vec v = random_vec(rng, 5);
    const auto full_mask = Selection::all(Side::parameter, 5);
    const auto full_subset = Selection::all(Side::data, 6);
    const auto g1 = coordination_gap(full_mask, random_subset(rng, Side::data, 6), v, grads, 0.1);
    for (double x : g1.data_gap) EXPECT_EQ(x, 0.0);
    const auto g2 = coordination_gap(random_subset(rng, Side::parameter, 5), full_subset, v, grads, 0.1);
    for (double x : g2.param_gap) EXPECT_EQ(x, 0.0);
}

TEST(CoordinationGap, IdentityAgainstIndependentAwareScores) {
    std::mt19937_64 rng(18);
    for (int trial = 0; trial < 25; ++trial) {
        const std::size_t n = 7, dim = 6;
        const auto grads = random_grads(rng, n, dim);
        const Vec v = random_vec(rng, dim);
        const double eta = 0.05;
        const auto mask = random_subset(rng, Side::parameter, dim);
        const auto subset = random_subset(rng, Side::data, n);
        const auto gap = coordination_gap(mask, subset, v, grads, eta);
        const Vec g = grads.total();
        for (std::size_t i = 0; i < n; ++i) {
            double isolated = 0.0, aware = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                isolated += eta * v[d] * grads.rows(i, d);
                if (mask.contains(d)) aware += eta * v[d] * grads.rows(i, d);
            }
            EXPECT_LE(std::abs(isolated - aware - gap.data_gap[i]), 1e-12);
        }
        for (std::size_t d = 0; d < dim; ++d) {
            double gs = 0.0;
            for (std::size_t i : subset.members) gs += grads.rows(i, d);
            const double isolated = eta * v[d] * g[d];
            const double aware = eta * v[d] * gs;
            EXPECT_LE(std::abs(isolated - aware - gap.param_gap[d]), 1e-12);
        }
        const Vec ad = mask_aware_data_scores(mask, v, grads, eta);
        const Vec ap = mask_aware_param_scores(subset, v, grads, eta);
        for (std::size_t i = 0; i < n; ++i) {
            double ref = 0.0;
            for (std::size_t d : mask.members) ref += eta * v[d] * grads.rows(i, d);
            EXPECT_NEAR(ad[i], ref, 1e-13);
        }
        for (std::size_t d = 0; d < dim; ++d) {
            double gs = 0.0;
            for (std::size_t i : subset.members) gs += grads.rows(i, d);
            EXPECT_NEAR(ap[d], eta * v[d] * gs, 1e-13);
        }
    }
}
