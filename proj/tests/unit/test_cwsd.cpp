// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/fixtures.hpp"

using namespace dualsft;
using namespace dualsft::testing;

namespace {

struct LmFixture {
    // vocab 8, embed 4: D = 32 + 32 + 8 = 72.
    ToyModel model = ToyModel::tiny_causal_lm(8, 4, 3, 1.5);
    std::vector<Example> anchors;
    Vec student;

    explicit LmFixture(std::uint64_t seed = 1) {
        std::mt19937_64 rng(seed);
        anchors = lm_batch(rng, 6, 8, 7);
        student = model.params().values();
        axpy(1.0, random_vec(rng, student.size(), 0.4), student);
    }
    CwsdObjective objective(double tau) const {
        return CwsdObjective(model, CwsdConfig{tau, anchors, model.params().values()});
    }
};

} // namespace

TEST(ConfidenceWeight, UniformTeacherGivesZero) {
    EXPECT_NEAR(confidence_weight({Vec(4, 0.25), Vec(4, 0.25)}, 4), 0.0, 1e-15);
}

TEST(ConfidenceWeight, NearlyDeterministicTeacherApproachesOne) {
    double prev = -1.0;
    for (double eps : {1e-2, 1e-4, 1e-8}) {
        const Vec p = {1.0 - 3.0 * eps, eps, eps, eps};
        const double w = confidence_weight({p}, 4);
        EXPECT_GT(w, prev);
        prev = w;
    }
    EXPECT_GT(prev, 1.0 - 1e-6);
    EXPECT_EQ(confidence_weight({Vec{1.0, 0.0, 0.0}}, 3), 1.0);
}

TEST(ConfidenceWeight, MatchesDirectEntropyFormula) {
    const Vec p = {0.7, 0.1, 0.1, 0.1};
    const double h = -(0.7 * std::log(0.7) + 3.0 * 0.1 * std::log(0.1));
    EXPECT_NEAR(confidence_weight({p, p, p}, 4), 1.0 - h / std::log(4.0), 1e-15);
    EXPECT_THROW(confidence_weight({p}, 1), ConfigError);
    EXPECT_THROW(confidence_weight(std::vector<Vec>{}, 4), ConfigError);
}

TEST(Cwsd, LossAndGradientAreExactlyZeroAtTeacher) {
    LmFixture f;
    for (double tau : {0.5, 1.0, 2.0}) {
        const auto obj = f.objective(tau);
        EXPECT_EQ(cwsd_loss(obj, f.model.params().values()), 0.0);
        const auto dir = cwsd_direction(obj, f.model.params());
        EXPECT_TRUE(dir.degenerate);
        for (double g : dir.direction.values()) EXPECT_EQ(g, 0.0);
    }
    const auto away = cwsd_direction(f.objective(1.0), f.model.params().with_values(f.student));
    EXPECT_FALSE(away.degenerate);
}

TEST(Cwsd, UniformTeacherGivesZeroLossEverywhere) {
    auto teacher = ToyModel::softmax_classifier(3, 4, 2);
    teacher.set_values(Vec(teacher.dim(), 0.0));
    std::mt19937_64 rng(4);
    const auto anchors = classification_batch(rng, 5, 3, 4);
    const CwsdObjective obj(teacher, CwsdConfig{1.0, anchors, teacher.params().values()});
    for (std::size_t i = 0; i < obj.anchor_count(); ++i) EXPECT_EQ(obj.weight(i), 0.0);
    for (int t = 0; t < 3; ++t) EXPECT_EQ(cwsd_loss(obj, random_vec(rng, teacher.dim(), 2.0)), 0.0);
}

TEST(Cwsd, TwoTokenVocabularyMatchesClosedFormKl) {
    // Classifier with 2 outputs and a single unit input: logits are w + b.
    auto model = ToyModel::softmax_classifier(1, 2, 1);
    const Vec teacher = {1.2, -0.3, 0.0, 0.0};  // logits [1.2, -0.3]
    const Vec student = {0.1, 0.4, 0.0, 0.0};   // logits [0.1, 0.4]
    Example x;
    x.x = {1.0};
    for (double tau : {0.7, 1.0, 2.5}) {
        const CwsdObjective obj(model, CwsdConfig{tau, {x}, teacher});
        const double q1 = 1.0 / (1.0 + std::exp(-(1.2 + 0.3) / tau));
        const double p1 = 1.0 / (1.0 + std::exp(-(0.1 - 0.4) / tau));
        const double kl = q1 * std::log(q1 / p1) + (1.0 - q1) * std::log((1.0 - q1) / (1.0 - p1));
        const double qa = 1.0 / (1.0 + std::exp(-1.5));  // teacher at temperature one
        const double h = -(qa * std::log(qa) + (1.0 - qa) * std::log(1.0 - qa));
        const double omega = 1.0 - h / std::log(2.0);
        EXPECT_NEAR(obj.weight(0), omega, 1e-15);
        EXPECT_NEAR(cwsd_loss(obj, student), omega * tau * tau * kl, 1e-14);
    }
}

TEST(Cwsd, GradientAgreesWithFiniteDifferences) {
    LmFixture f;
    ASSERT_LE(f.model.dim(), 200u);
    for (double tau : {0.5, 1.0, 2.0}) {
        const auto obj = f.objective(tau);
        const Vec g = gradient(obj, f.model.params().with_values(f.student)).values();
        const Vec fd = finite_difference_gradient(obj, f.student);
        EXPECT_LE(max_rel_diff(g, fd), 1e-4) << "tau " << tau;
        EXPECT_LE(max_coord_rel(g, fd, 1e-4), 1e-4) << "tau " << tau;
    }
}

TEST(Cwsd, LogitGradientIsOmegaTauPMinusQ) {
    LmFixture f;
    for (double tau : {0.5, 1.0, 3.0}) {
        const auto obj = f.objective(tau);
        for (std::size_t i = 0; i < obj.anchor_count(); ++i) {
            const auto grads = obj.logit_gradients(f.student, i);
            const auto p = f.model.temperature_probs(f.student, f.anchors[i], tau);
            const auto& q = obj.teacher_probs(i);
            ASSERT_EQ(grads.size(), p.size());
            for (std::size_t t = 0; t < grads.size(); ++t)
                for (std::size_t j = 0; j < grads[t].size(); ++j)
                    EXPECT_NEAR(grads[t][j], obj.weight(i) * tau * (p[t][j] - q[t][j]), 1e-10);
        }
    }
}

TEST(Cwsd, SingleTokenAnchorDirectionIsJacobianTransposeTimesResidual) {
    const auto model = ToyModel::tiny_causal_lm(5, 3, 9, 2.0);
    Example anchor;
    anchor.tokens = {2, 4};
    anchor.response_start = 1;  // one scored position
    std::mt19937_64 rng(5);
    Vec student = model.params().values();
    axpy(1.0, random_vec(rng, student.size(), 0.5), student);
    const double tau = 1.5;
    const CwsdObjective obj(model, CwsdConfig{tau, {anchor}, model.params().values()});
    const auto point = model.params().with_values(student);
    const Vec v_prior = cwsd_direction(obj, point).direction.values();

    const Vec z = model.logits<double>(student, anchor)[0];
    const Vec p = reference_softmax(z, tau);
    const Vec q = reference_softmax(model.logits<double>(model.params().values(), anchor)[0], tau);
    Vec assembled(student.size(), 0.0);
    for (std::size_t j = 0; j < z.size(); ++j) {
        // Column j of the logit Jacobian.
        const Vec col = gradient([&](auto x) { return model.logits(x, anchor)[0][j]; }, point).values();
        axpy(obj.weight(0) * tau * (p[j] - q[j]), col, assembled);
    }
    EXPECT_LE(max_rel_diff(v_prior, assembled), 1e-12);
}

TEST(Cwsd, MatchesReferenceKlAverage) {
    LmFixture f;
    const double tau = 1.3;
    const auto obj = f.objective(tau);
    double total = 0.0;
    for (std::size_t i = 0; i < f.anchors.size(); ++i) {
        const auto q = f.model.temperature_probs(f.model.params().values(), f.anchors[i], tau);
        const auto p = f.model.temperature_probs(f.student, f.anchors[i], tau);
        double kl = 0.0;
        for (std::size_t t = 0; t < q.size(); ++t) kl += reference_kl(q[t], p[t]);
        kl /= static_cast<double>(q.size());
        const auto q1 = f.model.temperature_probs(f.model.params().values(), f.anchors[i], 1.0);
        double h = 0.0;
        for (const auto& row : q1) h += entropy(row);
        h /= static_cast<double>(q1.size());
        total += (1.0 - h / std::log(8.0)) * tau * tau * kl;
    }
    total /= static_cast<double>(f.anchors.size());
    EXPECT_NEAR(cwsd_loss(obj, f.student), total, 1e-13);
}

TEST(Cwsd, ConfigurationErrors) {
    LmFixture f;
    EXPECT_THROW(f.objective(0.0), ConfigError);
    EXPECT_THROW(CwsdObjective(f.model, CwsdConfig{1.0, f.anchors, Vec(3, 0.0)}), ConfigError);
    const auto reg = ToyModel::quadratic_regression(2, 1);
    Example x;
    x.x = {1.0, 2.0};
    EXPECT_THROW(CwsdObjective(reg, CwsdConfig{1.0, {x}, reg.params().values()}), ConfigError);
}
