// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dualsft/error.hpp"
#include "dualsft/linalg.hpp"
#include "dualsft/tensor_core.hpp"

namespace dualsft {

enum class Side { parameter, data };

inline std::string to_string(Side s) { return s == Side::parameter ? "parameter" : "data"; }

/// Selected index set on one axis: coordinates for the parameter side, examples for the data side.
struct Selection {
    Side side = Side::data;
    std::vector<std::size_t> members;

    /// Sorts and validates `members` against a universe of `universe` indices.
    static Selection make(Side side, std::vector<std::size_t> members, std::size_t universe) {
        std::sort(members.begin(), members.end());
        require(std::adjacent_find(members.begin(), members.end()) == members.end(),
                "selection has repeated indices");
        require(members.empty() || members.back() < universe, "selection index out of range");
        return {side, std::move(members)};
    }

    static Selection all(Side side, std::size_t universe) {
        Selection s{side, std::vector<std::size_t>(universe)};
        for (std::size_t i = 0; i < universe; ++i) s.members[i] = i;
        return s;
    }

    std::size_t size() const { return members.size(); }
    bool contains(std::size_t i) const { return std::binary_search(members.begin(), members.end(), i); }

    /// 0/1 indicator over the universe.
    Vec indicator(std::size_t universe) const {
        Vec m(universe, 0.0);
        for (std::size_t i : members) m[i] = 1.0;
        return m;
    }
};

enum class Order { first, diag, full };

inline std::string to_string(Order o) {
    switch (o) {
    case Order::first: return "first";
    case Order::diag: return "diag";
    case Order::full: return "full";
    }
    return "?";
}

inline Order parse_order(const std::string& s) {
    if (s == "first") return Order::first;
    if (s == "diag") return Order::diag;
    if (s == "full") return Order::full;
    throw ConfigError("unknown order '" + s + "' (expected first, diag or full)");
}

/// Second-order information for the diag and full truncations.
struct Curvature {
    std::optional<Vec> diagonal;
    std::optional<Matrix> hessian;
    std::function<Vec(std::span<const double>)> hvp;

    static Curvature none() { return {}; }
    static Curvature diag(Vec c) { return {std::move(c), std::nullopt, {}}; }
    static Curvature full(Matrix h) { return {std::nullopt, std::move(h), {}}; }
    static Curvature from_hvp(std::function<Vec(std::span<const double>)> f) {
        return {std::nullopt, std::nullopt, std::move(f)};
    }

    bool has_full() const { return hessian.has_value() || static_cast<bool>(hvp); }

    Vec apply_full(std::span<const double> v) const {
        if (hessian) return matvec(*hessian, v);
        if (hvp) return hvp(v);
        throw ConfigError("full-order truncation needs a dense Hessian or a Hessian-vector product");
    }
};

/// Local one-step update: -eta (G restricted to S) or -eta sum_{n in S} g_n.
inline Vec one_step_update(const Selection& sel, const PerSampleGradients& grads, double eta) {
    Vec step(grads.dim(), 0.0);
    if (sel.side == Side::parameter) {
        const Vec g = grads.total();
        for (std::size_t d : sel.members) step[d] = -eta * g.at(d);
    } else {
        const Vec gs = grads.subset_sum(sel.members);
        for (std::size_t d = 0; d < step.size(); ++d) step[d] = -eta * gs[d];
    }
    return step;
}

/// U(S) = L(theta) - L(theta + step(S)) by re-evaluating the objective.
template <class L>
double exact_step_utility(const Selection& sel, const L& objective, std::span<const double> point,
                          const PerSampleGradients& grads, double eta) {
    if (sel.members.empty() || eta == 0.0) return 0.0;
    const Vec step = one_step_update(sel, grads, eta);
    Vec moved(point.begin(), point.end());
    axpy(1.0, step, moved);
    return static_cast<double>(objective(std::span<const double>(point))) -
           static_cast<double>(objective(std::span<const double>(moved)));
}

/// Quadratic form of the second-order truncation for a given step.
inline double curvature_term(Order order, std::span<const double> step, const Curvature& curvature) {
    switch (order) {
    case Order::first: return 0.0;
    case Order::diag: {
        if (!curvature.diagonal) throw ConfigError("diag truncation needs a curvature vector");
        double q = 0.0;
        for (std::size_t d = 0; d < step.size(); ++d) q += (*curvature.diagonal)[d] * step[d] * step[d];
        return q;
    }
    case Order::full: return dot(step, curvature.apply_full(step));
    }
    return 0.0;
}

/// Taylor truncation -v^T step - 1/2 step^T H step (H = 0, Diag(c) or the full Hessian).
inline double taylor_utility(const Selection& sel, Order order, std::span<const double> v_val,
                             const Curvature& curvature, const PerSampleGradients& grads, double eta) {
    const Vec step = one_step_update(sel, grads, eta);
    return -dot(v_val, step) - 0.5 * curvature_term(order, step, curvature);
}

struct SlopeFit {
    enum class Status { fitted, exact, inconclusive };
    Status status = Status::inconclusive;
    double slope = 0.0;
    std::size_t points_used = 0;
};

inline std::string to_string(SlopeFit::Status s) {
    switch (s) {
    case SlopeFit::Status::fitted: return "fitted";
    case SlopeFit::Status::exact: return "exact";
    case SlopeFit::Status::inconclusive: return "inconclusive";
    }
    return "?";
}

inline constexpr double kErrorFloor = 1e-14;

/// Ordinary least-squares slope of log(error) against log(eta), ignoring errors at or below the floor.
inline SlopeFit fit_loglog_slope(std::span<const double> etas, std::span<const double> errors,
                                 double floor = kErrorFloor) {
    std::vector<double> xs, ys;
    for (std::size_t i = 0; i < etas.size(); ++i)
        if (errors[i] > floor) {
            xs.push_back(std::log(etas[i]));
            ys.push_back(std::log(errors[i]));
        }
    SlopeFit fit;
    fit.points_used = xs.size();
    if (xs.empty()) {
        fit.status = SlopeFit::Status::exact;
        return fit;
    }
    if (xs.size() < 3) return fit;
    const double n = static_cast<double>(xs.size());
    const double mx = sum(xs) / n;
    const double my = sum(ys) / n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    fit.slope = sxy / sxx;
    fit.status = SlopeFit::Status::fitted;
    return fit;
}

struct TruncationScan {
    Vec etas;
    Vec step_utility;
    Vec first_error;   // |U_step - U_1st|
    Vec second_error;  // |U_step - U_2nd|
    SlopeFit first;
    SlopeFit second;
};

/**
 * Measures how the first- and second-order truncation errors shrink with the
 * step size. `etas` must hold at least four values spanning two decades.
 */
template <class L>
TruncationScan truncation_scan(const Selection& sel, const L& objective, std::span<const double> point,
                               const PerSampleGradients& grads, std::span<const double> v_val,
                               const Curvature& hessian, std::span<const double> etas) {
    require(etas.size() >= 4, "truncation scan needs at least 4 step sizes");
    const auto [lo, hi] = std::minmax_element(etas.begin(), etas.end());
    require(*lo > 0.0 && *hi / *lo >= 100.0 * (1.0 - 1e-12), "step sizes must be positive and span two decades");
    TruncationScan scan;
    scan.etas.assign(etas.begin(), etas.end());
    for (double eta : etas) {
        const double u_step = exact_step_utility(sel, objective, point, grads, eta);
        const double u1 = taylor_utility(sel, Order::first, v_val, hessian, grads, eta);
        const double u2 = taylor_utility(sel, Order::full, v_val, hessian, grads, eta);
        scan.step_utility.push_back(u_step);
        scan.first_error.push_back(std::abs(u_step - u1));
        scan.second_error.push_back(std::abs(u_step - u2));
    }
    scan.first = fit_loglog_slope(scan.etas, scan.first_error);
    scan.second = fit_loglog_slope(scan.etas, scan.second_error);
    return scan;
}

/**
 * Empirical smoothness constant: the largest gradient-difference ratio
 * ||grad(x) - grad(y)|| / ||x - y|| over `probes` consecutive pieces of the
 * segment [point, point + step] and `probes` random pairs in a ball of
 * radius ||step|| around the point.
 */
template <class GradFn>
double estimate_smoothness(const GradFn& grad, std::span<const double> point, std::span<const double> step,
                           std::uint64_t seed, int probes = 32) {
    const std::size_t dim = point.size();
    const double radius = norm2(step);
    if (radius == 0.0) return 0.0;
    auto at = [&](double t) {
        Vec x(point.begin(), point.end());
        axpy(t, step, x);
        return x;
    };
    double beta = 0.0;
    Vec prev_x = at(0.0);
    Vec prev_g = grad(prev_x);
    for (int k = 1; k <= probes; ++k) {
        Vec x = at(static_cast<double>(k) / probes);
        Vec g = grad(x);
        beta = std::max(beta, norm2(sub(g, prev_g)) / norm2(sub(x, prev_x)));
        prev_x = std::move(x);
        prev_g = std::move(g);
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    for (int k = 0; k < probes; ++k) {
        Vec dir(dim);
        for (double& v : dir) v = normal(rng);
        const double s = radius / norm2(dir);
        Vec x(point.begin(), point.end()), y(point.begin(), point.end());
        const double t = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        for (std::size_t d = 0; d < dim; ++d) {
            x[d] += t * s * dir[d];
            y[d] -= (1.0 - t) * s * dir[d];
        }
        beta = std::max(beta, norm2(sub(grad(x), grad(y))) / norm2(sub(x, y)));
    }
    return beta;
}

struct CoordinationGap {
    Vec data_gap;   // length N
    Vec param_gap;  // length D
};

/// Data scores under a parameter mask: <w . m, g_n>. With w = eta v_val these are the mask-aware scores.
inline Vec aware_data_scores(std::span<const double> w, const Selection& mask, const PerSampleGradients& grads) {
    const Vec m = mask.indicator(grads.dim());
    const Vec wm = hadamard(w, m);
    Vec out(grads.count());
    for (std::size_t n = 0; n < grads.count(); ++n) out[n] = dot(wm, grads.row(n));
    return out;
}

/// Parameter scores under a data subset: w_d (G_S)_d.
inline Vec aware_param_scores(std::span<const double> w, const Selection& subset, const PerSampleGradients& grads) {
    return hadamard(w, grads.subset_sum(subset.members));
}

/// Mask-aware first-order scores with w = eta v_val.
inline Vec mask_aware_data_scores(const Selection& mask, std::span<const double> v_val,
                                  const PerSampleGradients& grads, double eta) {
    return aware_data_scores(scaled(v_val, eta), mask, grads);
}

inline Vec mask_aware_param_scores(const Selection& subset, std::span<const double> v_val,
                                   const PerSampleGradients& grads, double eta) {
    return aware_param_scores(scaled(v_val, eta), subset, grads);
}

/// Gaps between isolated and mask-aware first-order scores, summed over frozen coordinates / excluded samples.
inline CoordinationGap coordination_gap(const Selection& mask, const Selection& subset, std::span<const double> v_val,
                                        const PerSampleGradients& grads, double eta) {
    CoordinationGap gap{Vec(grads.count(), 0.0), Vec(grads.dim(), 0.0)};
    std::vector<std::size_t> frozen;
    for (std::size_t d = 0; d < grads.dim(); ++d)
        if (!mask.contains(d)) frozen.push_back(d);
    for (std::size_t n = 0; n < grads.count(); ++n) {
        double s = 0.0;
        for (std::size_t d : frozen) s += v_val[d] * grads.row(n)[d];
        gap.data_gap[n] = eta * s;
    }
    Vec excluded(grads.dim(), 0.0);
    for (std::size_t n = 0; n < grads.count(); ++n)
        if (!subset.contains(n)) axpy(1.0, grads.row(n), excluded);
    for (std::size_t d = 0; d < grads.dim(); ++d) gap.param_gap[d] = eta * v_val[d] * excluded[d];
    return gap;
}

} // namespace dualsft
