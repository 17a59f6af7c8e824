// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualsft/certificates.hpp"
#include "dualsft/error.hpp"
#include "dualsft/metrics.hpp"
#include "dualsft/pipeline.hpp"
#include "dualsft/scoring.hpp"
#include "dualsft/shapley.hpp"
#include "dualsft/surrogate.hpp"

namespace dualsft {

inline const std::vector<std::string>& diagnostic_kinds() {
    static const std::vector<std::string> kinds = {"shapley", "truncation", "coordination", "regret",
                                                   "stability", "diag_full", "fidelity", "reselect"};
    return kinds;
}

inline constexpr std::size_t kDenseDiagnosticDim = 1024;

/// Full curvature of L_val at theta_bar: dense when small, Hessian-vector products otherwise.
inline Curvature validation_curvature(const Run& run) {
    const ValidationObjective& obj = *run.objective;
    const ParameterVector& at = run.warm.theta_bar;
    if (at.size() <= kDenseDiagnosticDim) return Curvature::full(dense_hessian(obj, at).entries);
    return Curvature::from_hvp([&obj, at](std::span<const double> v) { return hvp(obj, at, v).values(); });
}

namespace detail {

inline std::vector<std::size_t> first_indices(std::size_t count) {
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

inline double sum_over(std::span<const double> v, std::span<const std::size_t> members) {
    double s = 0.0;
    for (std::size_t i : members) s += v[i];
    return s;
}

inline std::vector<std::size_t> random_subset(std::mt19937_64& rng, std::size_t universe, std::size_t count) {
    std::vector<std::size_t> idx(universe);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(std::min(count, universe));
    std::sort(idx.begin(), idx.end());
    return idx;
}

inline nlohmann::json diagnose_shapley(const Run& run) {
    const ParameterVector& at = run.warm.theta_bar;
    const Vec& v = run.vgrads.v_val.values();
    const double eta = run.eta_sc;
    const auto& grads = run.pool.grads;
    const Curvature diag = Curvature::diag(run.warm.c_hat);
    nlohmann::json out = nlohmann::json::array();
    double worst_dev = 0.0, worst_eff = 0.0;

    const auto data_players = first_indices(std::min<std::size_t>(8, grads.count()));
    const auto param_players = first_indices(std::min<std::size_t>(8, grads.dim()));
    const Curvature data_full = validation_curvature(run);
    // Parameter-side full games need only the Hessian block on the players.
    Curvature param_full = Curvature::full(slice_hessian(*run.objective, at, 0, param_players.size()));

    for (Order order : {Order::first, Order::diag, Order::full}) {
        for (Side side : {Side::data, Side::parameter}) {
            SurrogateInstance inst;
            const Curvature& curv = order == Order::diag ? diag : data_full;
            if (side == Side::data) {
                inst = restrict_instance(side, data_players, grads, v, curv);
            } else if (order == Order::full) {
                inst = restrict_instance(side, param_players, grads, v, Curvature::none());
                inst.curvature = param_full;
            } else {
                inst = restrict_instance(side, param_players, grads, v, order == Order::diag ? diag : Curvature::none());
            }
            const SurrogateGame game = make_surrogate_game(side, order, inst, eta);
            const Vec phi = exact_shapley(game);
            const Vec closed = closed_form_scores(side, order, inst, eta);
            double dev = 0.0;
            for (std::size_t i = 0; i < phi.size(); ++i) dev = std::max(dev, std::abs(phi[i] - closed[i]));
            const double eff = efficiency_check(game, closed);
            worst_dev = std::max(worst_dev, dev);
            worst_eff = std::max(worst_eff, eff);
            out.push_back({{"order", to_string(order)},
                           {"side", to_string(side)},
                           {"players", game.players},
                           {"max_deviation", dev},
                           {"efficiency_residual", eff}});
        }
    }
    return {{"games", out}, {"max_deviation", worst_dev}, {"max_efficiency_residual", worst_eff}};
}

inline nlohmann::json diagnose_truncation(const Run& run) {
    const ParameterVector& at = run.warm.theta_bar;
    const auto& grads = run.pool.grads;
    const double gnorm = norm2(run.pool.total);
    require(gnorm > 0.0, "pool gradient is zero; nothing to scan");
    Vec etas;
    for (int i = 0; i <= 6; ++i) etas.push_back(0.3 * std::pow(10.0, -i / 3.0) / gnorm);
    const Selection all = Selection::all(Side::data, grads.count());
    const Curvature h = validation_curvature(run);
    const TruncationScan scan = truncation_scan(all, *run.objective, at.values(), grads,
                                                run.vgrads.v_val.values(), h, etas);
    const Vec step = one_step_update(all, grads, etas.front());
    const auto grad_fn = [&](std::span<const double> x) {
        return gradient(*run.objective, at.with_values(Vec(x.begin(), x.end()))).values();
    };
    const double beta = estimate_smoothness(grad_fn, at.values(), step, stream_seed(run.config.seed, kStreamDiagnostics));
    std::size_t bound_violations = 0;
    const double g2 = gnorm * gnorm;
    for (std::size_t i = 0; i < etas.size(); ++i)
        if (scan.first_error[i] > 0.5 * beta * etas[i] * etas[i] * g2) ++bound_violations;
    return {{"etas", scan.etas},
            {"first_error", scan.first_error},
            {"second_error", scan.second_error},
            {"first_slope", scan.first.slope},
            {"first_status", to_string(scan.first.status)},
            {"second_slope", scan.second.slope},
            {"second_status", to_string(scan.second.status)},
            {"beta", beta},
            {"bound_violations", bound_violations}};
}

inline nlohmann::json diagnose_coordination(const Run& run) {
    const auto& grads = run.pool.grads;
    const Vec& v = run.vgrads.v_val.values();
    const double eta = run.eta_sc;
    const auto residual = [&](const Selection& mask, const Selection& subset) {
        const CoordinationGap gap = coordination_gap(mask, subset, v, grads, eta);
        const Vec iso_data = mask_aware_data_scores(Selection::all(Side::parameter, grads.dim()), v, grads, eta);
        const Vec aware_data = mask_aware_data_scores(mask, v, grads, eta);
        const Vec iso_param = mask_aware_param_scores(Selection::all(Side::data, grads.count()), v, grads, eta);
        const Vec aware_param = mask_aware_param_scores(subset, v, grads, eta);
        double r = 0.0, gmax = 0.0;
        for (std::size_t n = 0; n < grads.count(); ++n) {
            r = std::max(r, std::abs(iso_data[n] - aware_data[n] - gap.data_gap[n]));
            gmax = std::max(gmax, std::abs(gap.data_gap[n]));
        }
        double rp = 0.0, gpmax = 0.0;
        for (std::size_t d = 0; d < grads.dim(); ++d) {
            rp = std::max(rp, std::abs(iso_param[d] - aware_param[d] - gap.param_gap[d]));
            gpmax = std::max(gpmax, std::abs(gap.param_gap[d]));
        }
        return nlohmann::json{{"data_residual", r}, {"param_residual", rp},
                              {"max_data_gap", gmax}, {"max_param_gap", gpmax}};
    };
    return {{"selected", residual(run.param_mask, run.pool_selection)},
            {"full_mask_full_subset",
             residual(Selection::all(Side::parameter, grads.dim()), Selection::all(Side::data, grads.count()))}};
}

struct RegretSide {
    double jaccard = 0.0;
    double ratio = 0.0;
    double regret = 0.0;
};

inline constexpr double kRegretEpsilon = 1e-12;

/// Ratio of aware utilities of the unaware and aware top sets; identical sets give exactly 1.
inline RegretSide regret_side(std::span<const double> aware, std::span<const double> unaware, std::size_t budget,
                              Side side) {
    const Selection s_aware = topk_signed(aware, budget, side);
    const Selection s_unaware = topk_signed(unaware, budget, side);
    RegretSide r;
    r.jaccard = jaccard(s_aware.members, s_unaware.members);
    if (s_aware.members == s_unaware.members) {
        r.ratio = 1.0;
    } else {
        r.ratio = sum_over(aware, s_unaware.members) / (sum_over(aware, s_aware.members) + kRegretEpsilon);
    }
    r.regret = 100.0 * (1.0 - r.ratio);
    return r;
}

inline nlohmann::json diagnose_regret(const Run& run) {
    const auto& grads = run.pool.grads;
    const Vec& u = run.projection.u;
    const Vec aware_data = aware_data_scores(u, run.param_mask, grads);
    const RegretSide data = regret_side(aware_data, run.scores.data, run.pool_selection.size(), Side::data);
    const Vec aware_param = aware_param_scores(u, run.pool_selection, grads);
    const RegretSide param = regret_side(aware_param, run.scores.theta, run.param_mask.size(), Side::parameter);
    auto j = [](const RegretSide& r) {
        return nlohmann::json{{"jaccard", r.jaccard}, {"ratio", r.ratio}, {"regret_percent", r.regret}};
    };
    return {{"data", j(data)}, {"param", j(param)}};
}

inline nlohmann::json diagnose_stability(const Run& run) {
    const auto& grads = run.pool.grads;
    require(grads.dim() <= kMaxDenseHessianDim, "stability diagnostic needs a dense Hessian");
    const Matrix h = dense_hessian(*run.objective, run.warm.theta_bar).entries;
    const double eta = run.eta_sc;
    const Vec& v = run.vgrads.v_val.values();
    const Vec& g = run.pool.total;
    const Vec& c = run.warm.c_hat;
    const ScorePerturbation p = score_perturbation(h, c, grads, eta);

    const double half_eta2 = 0.5 * eta * eta;
    const Vec hg = matvec(h, g);
    Vec u_full(g.size()), u_diag(g.size());
    for (std::size_t d = 0; d < g.size(); ++d) {
        u_full[d] = eta * v[d] - half_eta2 * hg[d];
        u_diag[d] = eta * v[d] - half_eta2 * c[d] * g[d];
    }
    const ScorePair full = practical_scores(u_full, grads);
    const ScorePair diag = practical_scores(u_diag, grads);
    double id_theta = 0.0, id_data = 0.0, max_dev_theta = 0.0, max_dev_data = 0.0;
    for (std::size_t d = 0; d < g.size(); ++d) {
        id_theta = std::max(id_theta, std::abs(diag.theta[d] - full.theta[d] - p.theta_dev[d]));
        max_dev_theta = std::max(max_dev_theta, std::abs(p.theta_dev[d]));
    }
    for (std::size_t n = 0; n < grads.count(); ++n) {
        id_data = std::max(id_data, std::abs(diag.data[n] - full.data[n] - p.data_dev[n]));
        max_dev_data = std::max(max_dev_data, std::abs(p.data_dev[n]));
    }
    const std::size_t k = run.param_mask.size(), b = run.pool_selection.size();
    const StabilityCertificate ck = stability_certificate(diag.theta, k, p.eps_theta);
    const StabilityCertificate cb = stability_certificate(diag.data, b, p.eps_data);
    const bool same_k = topk_signed(diag.theta, k).members == topk_signed(full.theta, k).members;
    const bool same_b = topk_signed(diag.data, b).members == topk_signed(full.data, b).members;
    auto cert = [](const StabilityCertificate& c, bool same) {
        return nlohmann::json{{"gap", std::isfinite(c.gap) ? nlohmann::json(c.gap) : nlohmann::json(nullptr)},
                              {"epsilon", c.epsilon},
                              {"certified", c.certified},
                              {"selections_match", same}};
    };
    return {{"op_norm", p.op_norm},
            {"eps_theta", p.eps_theta},
            {"eps_data", p.eps_data},
            {"max_theta_deviation", max_dev_theta},
            {"max_data_deviation", max_dev_data},
            {"theta_identity_residual", id_theta},
            {"data_identity_residual", id_data},
            {"param_certificate", cert(ck, same_k)},
            {"data_certificate", cert(cb, same_b)}};
}

inline nlohmann::json diagnose_diag_full(const Run& run) {
    const std::size_t dim = run.theta_old.size();
    const std::size_t begin = run.config.slice_begin;
    const std::size_t end = run.config.slice_end ? run.config.slice_end : std::min(dim, kMaxSliceDim);
    const DiagFullAgreement a =
        diag_full_rank_agreement(*run.objective, run.warm.theta_bar, begin, end, run.pool.grads,
                                 run.vgrads.v_val.values(), run.warm.c_hat, run.eta_sc,
                                 stream_seed(run.config.seed, kStreamDiagnostics));
    auto j = [](const RankAgreement& r) {
        return nlohmann::json{{"spearman", r.spearman}, {"pairwise_percent", r.pairwise}, {"top5_overlap", r.top5_overlap}};
    };
    return {{"slice", {a.begin, a.end}},
            {"data", j(a.data)},
            {"param", j(a.param)},
            {"data_random", j(a.data_random)},
            {"param_random", j(a.param_random)}};
}

/// Realized L_val gain after `steps` restricted steps from theta_bar.
/// sgd: theta -= eta_sc * (sum of subset gradients) . mask; adamw: masked AdamW on the subset mean.
inline double realized_gain(const Run& run, const Selection& mask, std::span<const std::size_t> pool_members) {
    const RunConfig& cfg = run.config;
    const ToyModel& model = *run.model;
    const ParameterVector& start = run.warm.theta_bar;
    const auto pool = run.pool_examples();
    std::vector<Example> subset;
    for (std::size_t i : pool_members) subset.push_back(pool[i]);
    const Vec m = mask.indicator(start.size());
    ParameterVector theta = start;
    AdamWConfig opt;
    opt.lr = cfg.eta_ft;
    OptimizerState state = OptimizerState::create(start.size(), opt, mask);
    for (int k = 0; k < cfg.fidelity_steps; ++k) {
        if (cfg.fidelity_optimizer == StepRule::sgd) {
            Vec g(start.size(), 0.0);
            for (const auto& ex : subset)
                axpy(1.0, gradient([&](auto p) { return model.loss(p, ex); }, theta).values(), g);
            for (std::size_t d = 0; d < g.size(); ++d) theta[d] -= run.eta_sc * (g[d] * m[d]);
        } else {
            const auto g = gradient([&](auto p) { return batch_loss(model, p, std::span<const Example>(subset)); }, theta);
            masked_step(state, theta, g.values());
        }
    }
    return eval_val(*run.objective, start.values()) - eval_val(*run.objective, theta.values());
}

inline nlohmann::json diagnose_fidelity(const Run& run) {
    const RunConfig& cfg = run.config;
    const auto& grads = run.pool.grads;
    std::mt19937_64 rng(stream_seed(cfg.seed, kStreamDiagnostics));
    const Selection all_params = Selection::all(Side::parameter, grads.dim());
    const auto all_pool = first_indices(grads.count());

    Vec pred_data, real_data;
    for (std::size_t s = 0; s < cfg.fidelity_subsets; ++s) {
        const auto members = random_subset(rng, grads.count(), cfg.fidelity_subset_size);
        pred_data.push_back(sum_over(run.scores.data, members));
        real_data.push_back(realized_gain(run, all_params, members));
    }
    const std::size_t k = std::max<std::size_t>(1, run.param_mask.size());
    Vec pred_param, real_param;
    for (std::size_t s = 0; s < cfg.fidelity_subsets; ++s) {
        const Selection mask = Selection::make(Side::parameter, random_subset(rng, grads.dim(), k), grads.dim());
        pred_param.push_back(sum_over(run.scores.theta, mask.members));
        real_param.push_back(realized_gain(run, mask, all_pool));
    }

    // Drift of one selected example's score along a masked AdamW trajectory from theta_bar.
    const ToyModel& model = *run.model;
    const std::size_t probe = run.pool_selection.members.empty() ? 0 : run.pool_selection.members.front();
    const Example probe_ex = run.pool_examples()[probe];
    std::vector<Vec> trajectory{run.warm.theta_bar.values()};
    {
        AdamWConfig opt;
        opt.lr = cfg.eta_ft;
        OptimizerState state = OptimizerState::create(grads.dim(), opt, run.param_mask.size() ? std::optional<Selection>(run.param_mask) : std::nullopt);
        ParameterVector theta = run.warm.theta_bar;
        auto sel = run.selected_examples();
        if (sel.empty()) sel = run.pool_examples();
        std::mt19937_64 order_rng(stream_seed(cfg.seed, kStreamDiagnostics) + 1);
        std::uniform_int_distribution<std::size_t> pick(0, sel.size() - 1);
        for (int t = 0; t < cfg.drift_steps; ++t) {
            std::vector<Example> batch;
            for (std::size_t i = 0; i < std::min(cfg.batch_size, sel.size()); ++i) batch.push_back(sel[pick(order_rng)]);
            const auto g = gradient([&](auto p) { return batch_loss(model, p, std::span<const Example>(batch)); }, theta);
            masked_step(state, theta, g.values());
            trajectory.push_back(theta.values());
        }
    }
    const ParameterVector& layout = run.theta_old;
    const DriftCurve drift = score_drift_bound(
        trajectory,
        [&](std::span<const double> x) { return gradient(*run.objective, layout.with_values(Vec(x.begin(), x.end()))).values(); },
        [&](std::span<const double> x) {
            return gradient([&](auto p) { return model.loss(p, probe_ex); }, layout.with_values(Vec(x.begin(), x.end()))).values();
        },
        run.eta_sc);
    double max_drift = 0.0, max_ratio = 0.0;
    for (std::size_t t = 0; t < drift.drift.size(); ++t) {
        max_drift = std::max(max_drift, drift.drift[t]);
        if (drift.bound[t] > 0.0) max_ratio = std::max(max_ratio, drift.drift[t] / drift.bound[t]);
    }
    return {{"steps", cfg.fidelity_steps},
            {"optimizer", to_string(cfg.fidelity_optimizer)},
            {"subsets", cfg.fidelity_subsets},
            {"subset_size", cfg.fidelity_subset_size},
            {"data_spearman", spearman(pred_data, real_data)},
            {"data_pairwise_percent", pairwise_agreement(pred_data, real_data)},
            {"param_spearman", spearman(pred_param, real_param)},
            {"param_pairwise_percent", pairwise_agreement(pred_param, real_param)},
            {"drift",
             {{"steps", cfg.drift_steps},
              {"probe_pool_index", probe},
              {"b_v", drift.b_v},
              {"b_g", drift.b_g},
              {"l_v", drift.l_v},
              {"l_g", drift.l_g},
              {"max_drift", max_drift},
              {"max_drift_to_bound", max_ratio},
              {"violations", drift.violations}}}};
}

inline nlohmann::json diagnose_reselect(const Run& run) {
    const auto& grads = run.pool.grads;
    const Vec& u = run.projection.u;
    std::mt19937_64 rng(stream_seed(run.config.seed, kStreamDiagnostics));
    const std::size_t k = run.param_mask.size(), b = run.pool_selection.size();

    // Data -> Param: parameter scores recomputed on the selected subset.
    const Vec s_theta1 = aware_param_scores(u, run.pool_selection, grads);
    const Selection m1 = topk_signed(s_theta1, k, Side::parameter);
    const auto rand_mask = random_subset(rng, grads.dim(), k);
    const double util0 = sum_over(s_theta1, run.param_mask.members);
    const double util1 = sum_over(s_theta1, m1.members);

    // Param -> Data: data scores rescored under the fixed mask.
    const Vec s_data1 = aware_data_scores(u, run.param_mask, grads);
    const Selection d1 = topk_signed(s_data1, b, Side::data);
    const auto rand_data = random_subset(rng, grads.count(), b);
    const double dutil0 = sum_over(s_data1, run.pool_selection.members);
    const double dutil1 = sum_over(s_data1, d1.members);

    return {{"data_to_param",
             {{"jaccard", jaccard(run.param_mask.members, m1.members)},
              {"random_jaccard", jaccard(run.param_mask.members, rand_mask)},
              {"spearman", grads.dim() >= 2 ? spearman(run.scores.theta, s_theta1) : 1.0},
              {"aware_utility_before", util0},
              {"aware_utility_after", util1},
              {"aware_utility_delta", util1 - util0}}},
            {"param_to_data",
             {{"jaccard", jaccard(run.pool_selection.members, d1.members)},
              {"random_jaccard", jaccard(run.pool_selection.members, rand_data)},
              {"spearman", grads.count() >= 2 ? spearman(run.scores.data, s_data1) : 1.0},
              {"aware_utility_before", dutil0},
              {"aware_utility_after", dutil1},
              {"aware_utility_delta", dutil1 - dutil0}}}};
}

} // namespace detail

/// Runs one diagnostic on a scored and selected run.
inline nlohmann::json diagnose(const Run& run, const std::string& kind) {
    nlohmann::json out;
    run_stage(("diagnose " + kind).c_str(), [&] {
        if (kind == "shapley") out = detail::diagnose_shapley(run);
        else if (kind == "truncation") out = detail::diagnose_truncation(run);
        else if (kind == "coordination") out = detail::diagnose_coordination(run);
        else if (kind == "regret") out = detail::diagnose_regret(run);
        else if (kind == "stability") out = detail::diagnose_stability(run);
        else if (kind == "diag_full") out = detail::diagnose_diag_full(run);
        else if (kind == "fidelity") out = detail::diagnose_fidelity(run);
        else if (kind == "reselect") out = detail::diagnose_reselect(run);
        else throw ConfigError("unknown diagnostic '" + kind + "'");
    });
    return out;
}

} // namespace dualsft
