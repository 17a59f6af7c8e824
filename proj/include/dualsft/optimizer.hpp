// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "dualsft/checkpoint.hpp"
#include "dualsft/error.hpp"
#include "dualsft/linalg.hpp"
#include "dualsft/parameter_vector.hpp"
#include "dualsft/surrogate.hpp"

namespace dualsft {

struct AdamWConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/**
 * AdamW moments with an optional coordinate mask.
 *
 * Masked-out coordinates keep m = r = 0 and are never updated or decayed.
 */
struct OptimizerState {
    AdamWConfig config;
    Vec m;
    Vec r;
    std::uint64_t step = 0;
    std::optional<Vec> mask;

    static OptimizerState create(std::size_t dim, AdamWConfig config, std::optional<Selection> mask = std::nullopt) {
        OptimizerState s;
        s.config = config;
        s.m.assign(dim, 0.0);
        s.r.assign(dim, 0.0);
        if (mask) s.mask = mask->indicator(dim);
        return s;
    }

    bool trainable(std::size_t d) const { return !mask || (*mask)[d] != 0.0; }
};

/// One AdamW step with bias correction and decoupled weight decay on unmasked coordinates.
inline void masked_step(OptimizerState& state, ParameterVector& params, std::span<const double> grad) {
    require(grad.size() == params.size() && state.m.size() == params.size(), "optimizer dimension mismatch");
    params.check_finite(grad, "optimizer gradient");
    const AdamWConfig& c = state.config;
    state.step += 1;
    const double t = static_cast<double>(state.step);
    const double bc1 = 1.0 - std::pow(c.beta1, t);
    const double bc2 = 1.0 - std::pow(c.beta2, t);
    for (std::size_t d = 0; d < params.size(); ++d) {
        if (!state.trainable(d)) continue;
        state.m[d] = c.beta1 * state.m[d] + (1.0 - c.beta1) * grad[d];
        state.r[d] = c.beta2 * state.r[d] + (1.0 - c.beta2) * grad[d] * grad[d];
        if (c.weight_decay != 0.0) params[d] -= c.lr * c.weight_decay * params[d];
        const double m_hat = state.m[d] / bc1;
        const double r_hat = state.r[d] / bc2;
        params[d] -= c.lr * m_hat / (std::sqrt(r_hat) + c.eps);
    }
}

/// c_hat = sqrt(r / (1 - beta2^t)) + eps, the damped RMS-gradient curvature proxy.
inline Vec curvature_proxy(const OptimizerState& state) {
    if (state.step == 0) throw ConfigError("curvature proxy is undefined before the first optimizer step");
    const double bc2 = 1.0 - std::pow(state.config.beta2, static_cast<double>(state.step));
    Vec c(state.r.size());
    for (std::size_t d = 0; d < c.size(); ++d) c[d] = std::sqrt(state.r[d] / bc2) + state.config.eps;
    return c;
}

inline void save_optimizer_state(const std::filesystem::path& path, const OptimizerState& s) {
    const std::size_t dim = s.m.size();
    Vec values;
    values.reserve(3 * dim);
    values.insert(values.end(), s.m.begin(), s.m.end());
    values.insert(values.end(), s.r.begin(), s.r.end());
    const Vec ones(dim, 1.0);
    const Vec& mask = s.mask ? *s.mask : ones;
    values.insert(values.end(), mask.begin(), mask.end());
    FlatRecord rec;
    rec.meta = {{"kind", "adamw"},
                {"step", std::to_string(s.step)},
                {"lr", format_double(s.config.lr)},
                {"beta1", format_double(s.config.beta1)},
                {"beta2", format_double(s.config.beta2)},
                {"eps", format_double(s.config.eps)},
                {"weight_decay", format_double(s.config.weight_decay)},
                {"masked", s.mask ? "1" : "0"}};
    rec.values = ParameterVector(std::move(values), {{"first_moment", 0, {dim}},
                                                     {"second_moment", dim, {dim}},
                                                     {"mask", 2 * dim, {dim}}});
    save_flat(path, rec);
}

inline OptimizerState load_optimizer_state(const std::filesystem::path& path) {
    const FlatRecord rec = load_flat(path);
    require(rec.meta.count("kind") && rec.meta.at("kind") == "adamw", "not an optimizer state file");
    const std::size_t dim = rec.values.size() / 3;
    const Vec& v = rec.values.values();
    OptimizerState s;
    s.config.lr = std::stod(rec.meta.at("lr"));
    s.config.beta1 = std::stod(rec.meta.at("beta1"));
    s.config.beta2 = std::stod(rec.meta.at("beta2"));
    s.config.eps = std::stod(rec.meta.at("eps"));
    s.config.weight_decay = std::stod(rec.meta.at("weight_decay"));
    s.step = std::stoull(rec.meta.at("step"));
    s.m.assign(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(dim));
    s.r.assign(v.begin() + static_cast<std::ptrdiff_t>(dim), v.begin() + static_cast<std::ptrdiff_t>(2 * dim));
    if (rec.meta.at("masked") == "1")
        s.mask = Vec(v.begin() + static_cast<std::ptrdiff_t>(2 * dim), v.end());
    return s;
}

} // namespace dualsft
