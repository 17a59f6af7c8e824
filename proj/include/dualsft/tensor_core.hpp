// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dualsft/autodiff.hpp"
#include "dualsft/error.hpp"
#include "dualsft/linalg.hpp"
#include "dualsft/parameter_vector.hpp"

namespace dualsft {

// An objective is a generic callable that can be evaluated on
// std::span<const double> (returning double) and on std::span<const Var>
// (returning Var). Generic lambdas over `auto params` satisfy both.

template <class F>
concept Objective = requires(const F& f, std::span<const double> pd, std::span<const Var> pv) {
    { f(pd) } -> std::convertible_to<double>;
    { f(pv) } -> std::same_as<Var>;
};

/// Rows g_n of per-example gradients taken at one checkpoint.
struct PerSampleGradients {
    Matrix rows;
    std::string checkpoint_id;

    std::size_t count() const { return rows.rows(); }
    std::size_t dim() const { return rows.cols(); }
    std::span<const double> row(std::size_t n) const { return rows.row(n); }

    /// G = sum_n g_n in ascending n.
    Vec total() const { return column_sums(rows); }

    /// sum over the listed rows, in the listed order.
    Vec subset_sum(std::span<const std::size_t> members) const {
        Vec out(dim(), 0.0);
        for (std::size_t n : members) axpy(1.0, row(n), out);
        return out;
    }
};

struct DenseHessian {
    enum class Source { finite_difference, analytic };
    Matrix entries;
    Source source = Source::finite_difference;

    std::size_t dim() const { return entries.rows(); }
};

inline constexpr std::size_t kMaxDenseHessianDim = 4096;

/// Evaluates the objective and its gradient in one forward/backward pass.
template <Objective F>
std::pair<double, ParameterVector> value_and_grad(const F& objective, const ParameterVector& point) {
    Tape tape;
    std::vector<Var> vars;
    vars.reserve(point.size());
    for (double v : point.values()) vars.push_back(tape.variable(v));
    const Var loss = objective(std::span<const Var>(vars));
    const double value = loss.value();
    if (!std::isfinite(value)) throw NumericError("objective value is not finite");
    Vec grad(point.size(), 0.0);
    tape.backward(loss);
    for (std::size_t i = 0; i < vars.size(); ++i) grad[i] = tape.adjoint(vars[i]);
    point.check_finite(grad, "gradient");
    return {value, point.with_values(std::move(grad))};
}

template <Objective F>
ParameterVector gradient(const F& objective, const ParameterVector& point) {
    return value_and_grad(objective, point).second;
}

template <Objective F>
double evaluate(const F& objective, std::span<const double> point) {
    return static_cast<double>(objective(point));
}

/// Central finite-difference gradient with step h_d = rel_step * max(1, |theta_d|).
template <Objective F>
Vec finite_difference_gradient(const F& objective, std::span<const double> point, double rel_step = 1e-4) {
    Vec x(point.begin(), point.end());
    Vec g(x.size());
    for (std::size_t d = 0; d < x.size(); ++d) {
        const double h = rel_step * std::max(1.0, std::abs(x[d]));
        const double orig = x[d];
        x[d] = orig + h;
        const double fp = evaluate(objective, x);
        x[d] = orig - h;
        const double fm = evaluate(objective, x);
        x[d] = orig;
        g[d] = (fp - fm) / (2.0 * h);
    }
    return g;
}

/**
 * Per-example gradients at a common point.
 *
 * `loss(params, example)` is generic over the scalar type. Rows are filled
 * in ascending example order, each from its own tape.
 */
template <class Loss, class Example>
PerSampleGradients per_sample_grads(const Loss& loss, std::span<const Example> batch,
                                    const ParameterVector& point, std::string checkpoint_id = "") {
    require(!batch.empty(), "per_sample_grads needs at least one example");
    PerSampleGradients out{Matrix(batch.size(), point.size()), std::move(checkpoint_id)};
    Tape tape;
    std::vector<Var> vars(point.size());
    for (std::size_t n = 0; n < batch.size(); ++n) {
        tape.clear();
        for (std::size_t d = 0; d < point.size(); ++d) vars[d] = tape.variable(point[d]);
        const Var l = loss(std::span<const Var>(vars), batch[n]);
        if (!std::isfinite(l.value()))
            throw NumericError("loss of example " + std::to_string(n) + " is not finite");
        tape.backward(l);
        auto row = out.rows.row(n);
        for (std::size_t d = 0; d < point.size(); ++d) row[d] = tape.adjoint(vars[d]);
        point.check_finite(row, "per-sample gradient of example " + std::to_string(n));
    }
    return out;
}

/// Hessian by central differences of the autodiff gradient, then symmetrized.
/// Column steps h_d = 1e-3 * max(1, |theta_d|).
template <Objective F>
DenseHessian dense_hessian(const F& objective, const ParameterVector& point, double rel_step = 1e-3) {
    const std::size_t dim = point.size();
    if (dim > kMaxDenseHessianDim)
        throw ConfigError("dense_hessian: dimension " + std::to_string(dim) + " exceeds " +
                          std::to_string(kMaxDenseHessianDim) + "; use hvp instead");
    DenseHessian h{Matrix(dim, dim), DenseHessian::Source::finite_difference};
    ParameterVector x = point;
    for (std::size_t d = 0; d < dim; ++d) {
        const double step = rel_step * std::max(1.0, std::abs(point[d]));
        x[d] = point[d] + step;
        const Vec gp = gradient(objective, x).values();
        x[d] = point[d] - step;
        const Vec gm = gradient(objective, x).values();
        x[d] = point[d];
        for (std::size_t r = 0; r < dim; ++r) h.entries(r, d) = (gp[r] - gm[r]) / (2.0 * step);
    }
    symmetrize(h.entries);
    point.check_finite(h.entries.data(), "dense Hessian");
    return h;
}

/// Hessian-vector product by a central difference of gradients along `direction`.
template <Objective F>
ParameterVector hvp(const F& objective, const ParameterVector& point, std::span<const double> direction,
                    double rel_step = 1e-3) {
    require(direction.size() == point.size(), "hvp: direction length mismatch");
    const double dn = norm2(direction);
    if (dn == 0.0) return point.zeros_like();
    const double step = rel_step * std::max(1.0, norm_inf(point.values())) / dn;
    Vec xp = point.values();
    Vec xm = point.values();
    axpy(step, direction, xp);
    axpy(-step, direction, xm);
    const Vec gp = gradient(objective, point.with_values(xp)).values();
    const Vec gm = gradient(objective, point.with_values(xm)).values();
    Vec out(point.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * step);
    point.check_finite(out, "Hessian-vector product");
    return point.with_values(std::move(out));
}

} // namespace dualsft
