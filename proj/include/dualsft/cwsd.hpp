// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "dualsft/autodiff.hpp"
#include "dualsft/error.hpp"
#include "dualsft/tensor_core.hpp"
#include "dualsft/toy_models.hpp"

namespace dualsft {

/// Natural-log entropy of a probability vector.
inline double entropy(std::span<const double> p) {
    double h = 0.0;
    for (double pi : p)
        if (pi > 0.0) h -= pi * std::log(pi);
    return h;
}

/// omega = 1 - (mean per-token entropy) / log|V|, clamped to [0, 1].
inline double confidence_weight(const std::vector<Vec>& token_probs, std::size_t vocab) {
    require(vocab >= 2, "confidence weight needs |V| >= 2");
    require(!token_probs.empty(), "confidence weight needs at least one token");
    double h = 0.0;
    for (const auto& p : token_probs) h += entropy(p);
    h /= static_cast<double>(token_probs.size());
    return std::clamp(1.0 - h / std::log(static_cast<double>(vocab)), 0.0, 1.0);
}

/// Confidence weight of the teacher's predictive distribution (temperature one) on `x`.
inline double confidence_weight(const ToyModel& model, std::span<const double> teacher, const Example& x) {
    return confidence_weight(model.temperature_probs(teacher, x, 1.0), model.output_dim());
}

struct CwsdConfig {
    double tau = 1.0;
    std::vector<Example> anchors;
    Vec teacher;  // frozen theta_old
};

/**
 * Confidence-weighted self-distillation loss
 *
 *     L(theta) = mean_x omega(x) tau^2 mean_t KL(q_t(x) || p_t(x; theta))
 *
 * with q from the frozen teacher and p = softmax(z / tau) from the student,
 * t ranging over non-padding response positions. Teacher distributions are
 * precomputed constants, so gradients only reach the student.
 */
class CwsdObjective {
public:
    CwsdObjective(const ToyModel& model, CwsdConfig config)
        : model_(&model), config_(std::move(config)) {
        if (!(config_.tau > 0.0)) throw ConfigError("CWSD temperature must be positive");
        require(config_.teacher.size() == model.dim(), "teacher checkpoint does not match the model");
        for (const auto& x : config_.anchors) {
            AnchorTarget a;
            a.weight = confidence_weight(model, config_.teacher, x);
            for (const auto& z : model.logits<double>(config_.teacher, x)) {
                a.q.push_back(softmax(z, config_.tau));
                a.log_q.push_back(log_softmax(z, config_.tau));
            }
            targets_.push_back(std::move(a));
        }
    }

    double tau() const { return config_.tau; }
    std::size_t anchor_count() const { return targets_.size(); }
    double weight(std::size_t i) const { return targets_[i].weight; }
    const std::vector<Vec>& teacher_probs(std::size_t i) const { return targets_[i].q; }
    const Vec& teacher() const { return config_.teacher; }
    const std::vector<Example>& anchors() const { return config_.anchors; }

    template <class T>
    T operator()(std::span<const T> p) const {
        std::vector<T> per_anchor;
        per_anchor.reserve(targets_.size());
        const double t2 = config_.tau * config_.tau;
        for (std::size_t i = 0; i < targets_.size(); ++i) {
            const AnchorTarget& a = targets_[i];
            const auto rows = model_->logits<T>(p, config_.anchors[i]);
            std::vector<T> kls;
            kls.reserve(rows.size());
            for (std::size_t t = 0; t < rows.size(); ++t)
                kls.push_back(kl_to_logits(a.q[t], a.log_q[t], std::span<const T>(rows[t]), config_.tau));
            const T token_mean = add_all(std::span<const T>(kls)) * (1.0 / static_cast<double>(kls.size()));
            per_anchor.push_back(token_mean * (a.weight * t2));
        }
        if (per_anchor.empty()) return p[0] * 0.0;
        return add_all(std::span<const T>(per_anchor)) * (1.0 / static_cast<double>(per_anchor.size()));
    }

    /**
     * Logit gradients of the per-token terms omega(x) tau^2 KL(q_t || p_t)
     * for one anchor, read back from the tape. Analytically omega tau (p - q).
     */
    std::vector<Vec> logit_gradients(std::span<const double> student, std::size_t anchor) const {
        Tape tape;
        std::vector<Var> vars(student.size());
        for (std::size_t d = 0; d < student.size(); ++d) vars[d] = tape.variable(student[d]);
        const AnchorTarget& a = targets_[anchor];
        const auto rows = model_->logits<Var>(std::span<const Var>(vars), config_.anchors[anchor]);
        std::vector<Var> terms;
        for (std::size_t t = 0; t < rows.size(); ++t)
            terms.push_back(kl_to_logits(a.q[t], a.log_q[t], std::span<const Var>(rows[t]), config_.tau) *
                            (a.weight * config_.tau * config_.tau));
        tape.backward(add_all(std::span<const Var>(terms)));
        std::vector<Vec> out;
        for (const auto& z : rows) {
            Vec g(z.size());
            for (std::size_t j = 0; j < z.size(); ++j) g[j] = tape.adjoint(z[j]);
            out.push_back(std::move(g));
        }
        return out;
    }

private:
    struct AnchorTarget {
        double weight = 0.0;
        std::vector<Vec> q;
        std::vector<Vec> log_q;
    };

    const ToyModel* model_;
    CwsdConfig config_;
    std::vector<AnchorTarget> targets_;
};

inline double cwsd_loss(const CwsdObjective& objective, std::span<const double> student) {
    return objective(student);
}

struct CwsdDirection {
    ParameterVector direction;
    /// Set when the direction is exactly zero, e.g. evaluated at the teacher.
    bool degenerate = false;
};

inline CwsdDirection cwsd_direction(const CwsdObjective& objective, const ParameterVector& student) {
    student.check_finite("CWSD student point");
    CwsdDirection out{gradient(objective, student), false};
    out.degenerate = std::all_of(out.direction.values().begin(), out.direction.values().end(),
                                 [](double v) { return v == 0.0; });
    return out;
}

} // namespace dualsft
