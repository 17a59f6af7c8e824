// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dualsft/error.hpp"
#include "dualsft/linalg.hpp"
#include "dualsft/metrics.hpp"
#include "dualsft/scoring.hpp"
#include "dualsft/tensor_core.hpp"

namespace dualsft {

/**
 * Exact gap between diagonal-proxy and full-Hessian scores, and its bounds.
 *
 * With K = H - Diag(c) and w = K G:
 *
 *     theta_dev_d = eta^2/2 w_d G_d              |.| <= eta^2/2 ||K||op ||G||^2
 *     data_dev_n  = eta^2/2 <g_n, w>             |.| <= eta^2/2 B_g ||K||op ||G||
 *
 * where B_g = max_n ||g_n||.
 */
struct ScorePerturbation {
    Vec theta_dev;
    Vec data_dev;
    double op_norm = 0.0;
    double grad_norm = 0.0;
    double max_sample_norm = 0.0;
    double eps_theta = 0.0;
    double eps_data = 0.0;
};

inline ScorePerturbation score_perturbation(const Matrix& hessian, std::span<const double> c_hat,
                                            const PerSampleGradients& grads, double eta_sc) {
    const std::size_t dim = grads.dim();
    require(hessian.rows() == dim && hessian.cols() == dim && c_hat.size() == dim,
            "score perturbation inputs have mismatched sizes");
    Matrix k = hessian;
    for (std::size_t d = 0; d < dim; ++d) k(d, d) -= c_hat[d];
    const Vec total = grads.total();
    const Vec w = matvec(k, total);
    const double half_eta2 = 0.5 * eta_sc * eta_sc;

    ScorePerturbation p;
    p.theta_dev.resize(dim);
    for (std::size_t d = 0; d < dim; ++d) p.theta_dev[d] = half_eta2 * w[d] * total[d];
    p.data_dev.resize(grads.count());
    for (std::size_t n = 0; n < grads.count(); ++n) {
        p.data_dev[n] = half_eta2 * dot(grads.row(n), w);
        p.max_sample_norm = std::max(p.max_sample_norm, norm2(grads.row(n)));
    }
    p.op_norm = symmetric_op_norm(k);
    p.grad_norm = norm2(total);
    p.eps_theta = half_eta2 * p.op_norm * p.grad_norm * p.grad_norm;
    p.eps_data = half_eta2 * p.max_sample_norm * p.op_norm * p.grad_norm;
    return p;
}

struct StabilityCertificate {
    double gap = 0.0;        // k-th minus (k+1)-th largest score; +inf without a boundary
    double epsilon = 0.0;
    bool certified = false;
};

/// Certified when the selection boundary gap exceeds twice the uniform score perturbation bound.
inline StabilityCertificate stability_certificate(std::span<const double> scores, std::size_t budget, double epsilon) {
    require(budget <= scores.size(), "budget exceeds the number of candidates");
    StabilityCertificate c;
    c.epsilon = epsilon;
    if (budget == 0 || budget == scores.size()) {
        c.gap = INFINITY;
        c.certified = true;
        return c;
    }
    Vec sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    c.gap = sorted[budget - 1] - sorted[budget];
    c.certified = c.gap > 2.0 * epsilon;
    return c;
}

/// Hessian block over coordinates [begin, end), by central differences of the gradient, symmetrized.
template <Objective F>
Matrix slice_hessian(const F& objective, const ParameterVector& point, std::size_t begin, std::size_t end,
                     double rel_step = 1e-3) {
    require(begin < end && end <= point.size(), "invalid coordinate slice");
    const std::size_t b = end - begin;
    Matrix h(b, b);
    ParameterVector x = point;
    for (std::size_t j = 0; j < b; ++j) {
        const std::size_t d = begin + j;
        const double step = rel_step * std::max(1.0, std::abs(point[d]));
        x[d] = point[d] + step;
        const Vec gp = gradient(objective, x).values();
        x[d] = point[d] - step;
        const Vec gm = gradient(objective, x).values();
        x[d] = point[d];
        for (std::size_t i = 0; i < b; ++i) h(i, j) = (gp[begin + i] - gm[begin + i]) / (2.0 * step);
    }
    symmetrize(h);
    return h;
}

inline constexpr std::size_t kMaxSliceDim = 512;

struct RankAgreement {
    double spearman = 0.0;
    double pairwise = 0.0;
    double top5_overlap = 0.0;
};

inline RankAgreement rank_agreement(std::span<const double> a, std::span<const double> b) {
    return {spearman(a, b), pairwise_agreement(a, b), top_fraction_overlap(a, b, 0.05)};
}

struct DiagFullAgreement {
    std::size_t begin = 0;
    std::size_t end = 0;
    RankAgreement data;
    RankAgreement param;
    RankAgreement data_random;
    RankAgreement param_random;
};

/**
 * Compares slice-level projections
 *
 *     u_full = eta v_B - eta^2/2 H_B G_B,    u_diag = eta v_B - eta^2/2 c_B . G_B
 *
 * through their induced data scores <u, g_{n,B}> and parameter scores u_d G_d.
 * Seeded Gaussian scores give the random baseline.
 */
template <Objective F>
DiagFullAgreement diag_full_rank_agreement(const F& objective, const ParameterVector& point, std::size_t begin,
                                           std::size_t end, const PerSampleGradients& grads,
                                           std::span<const double> v_val, std::span<const double> c_hat,
                                           double eta_sc, std::uint64_t seed) {
    require(end > begin && end - begin <= kMaxSliceDim, "slice must hold between 1 and 512 coordinates");
    require(end <= grads.dim() && v_val.size() == grads.dim() && c_hat.size() == grads.dim(),
            "slice inputs have mismatched sizes");
    const std::size_t b = end - begin;
    const Matrix h = slice_hessian(objective, point, begin, end);
    const Vec total = grads.total();
    const Vec g_b(total.begin() + static_cast<std::ptrdiff_t>(begin), total.begin() + static_cast<std::ptrdiff_t>(end));
    const Vec hg = matvec(h, g_b);
    const double half_eta2 = 0.5 * eta_sc * eta_sc;
    Vec u_full(b), u_diag(b);
    for (std::size_t i = 0; i < b; ++i) {
        u_full[i] = eta_sc * v_val[begin + i] - half_eta2 * hg[i];
        u_diag[i] = eta_sc * v_val[begin + i] - half_eta2 * c_hat[begin + i] * g_b[i];
    }
    Vec data_full(grads.count()), data_diag(grads.count());
    for (std::size_t n = 0; n < grads.count(); ++n) {
        const auto row = grads.row(n).subspan(begin, b);
        data_full[n] = dot(u_full, row);
        data_diag[n] = dot(u_diag, row);
    }
    const Vec param_full = hadamard(u_full, g_b);
    const Vec param_diag = hadamard(u_diag, g_b);

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Vec data_rand(grads.count()), param_rand(b);
    for (double& v : data_rand) v = normal(rng);
    for (double& v : param_rand) v = normal(rng);

    DiagFullAgreement out;
    out.begin = begin;
    out.end = end;
    out.data = rank_agreement(data_diag, data_full);
    out.param = rank_agreement(param_diag, param_full);
    out.data_random = rank_agreement(data_rand, data_full);
    out.param_random = rank_agreement(param_rand, param_full);
    return out;
}

/**
 * Drift of the first-order data score s(theta) = eta <grad L_val, grad l_n>
 * along a trajectory, against eta (B_v L_g + B_g L_v) ||theta_t - theta_0||.
 * Bounds and Lipschitz constants are the maxima over the trajectory points
 * and all pairs of them.
 */
struct DriftCurve {
    Vec distance;
    Vec drift;
    Vec bound;
    double b_v = 0.0, b_g = 0.0, l_v = 0.0, l_g = 0.0;
    std::size_t violations = 0;
};

using GradientFn = std::function<Vec(std::span<const double>)>;

inline DriftCurve score_drift_bound(const std::vector<Vec>& trajectory, const GradientFn& val_grad,
                                    const GradientFn& sample_grad, double eta) {
    require(!trajectory.empty(), "drift bound needs at least one checkpoint");
    const std::size_t t_count = trajectory.size();
    std::vector<Vec> vs, gs;
    for (const auto& theta : trajectory) {
        vs.push_back(val_grad(theta));
        gs.push_back(sample_grad(theta));
    }
    DriftCurve c;
    for (std::size_t t = 0; t < t_count; ++t) {
        c.b_v = std::max(c.b_v, norm2(vs[t]));
        c.b_g = std::max(c.b_g, norm2(gs[t]));
        for (std::size_t s = t + 1; s < t_count; ++s) {
            const double dist = norm2(sub(trajectory[t], trajectory[s]));
            if (dist == 0.0) continue;
            c.l_v = std::max(c.l_v, norm2(sub(vs[t], vs[s])) / dist);
            c.l_g = std::max(c.l_g, norm2(sub(gs[t], gs[s])) / dist);
        }
    }
    const double s0 = eta * dot(vs[0], gs[0]);
    for (std::size_t t = 0; t < t_count; ++t) {
        const double dist = norm2(sub(trajectory[t], trajectory[0]));
        const double drift = std::abs(eta * dot(vs[t], gs[t]) - s0);
        const double bound = eta * (c.b_v * c.l_g + c.b_g * c.l_v) * dist;
        c.distance.push_back(dist);
        c.drift.push_back(drift);
        c.bound.push_back(bound);
        if (drift > bound * (1.0 + 1e-9) + 1e-300) ++c.violations;
    }
    return c;
}

} // namespace dualsft
