// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "dualsft/cwsd.hpp"
#include "dualsft/error.hpp"
#include "dualsft/tensor_core.hpp"
#include "dualsft/toy_models.hpp"

namespace dualsft {

/**
 * Index-stable partition of the data used by one run.
 *
 * `warm` and `pool` hold indices into `train`; `pool` is train minus warm in
 * ascending order. Anchors must not repeat any training example.
 */
struct DatasetSplit {
    std::vector<Example> train;
    std::vector<Example> val;
    std::vector<Example> anchor;
    std::vector<std::size_t> warm;
    std::vector<std::size_t> pool;

    /// Fills `pool` from `warm` and checks the split invariants.
    void finalize() {
        std::sort(warm.begin(), warm.end());
        require(std::adjacent_find(warm.begin(), warm.end()) == warm.end(), "warmup indices repeat");
        require(warm.empty() || warm.back() < train.size(), "warmup index out of range");
        pool.clear();
        std::size_t w = 0;
        for (std::size_t n = 0; n < train.size(); ++n) {
            if (w < warm.size() && warm[w] == n) {
                ++w;
                continue;
            }
            pool.push_back(n);
        }
        for (const auto& a : anchor)
            require(std::find(train.begin(), train.end(), a) == train.end(),
                    "anchor set overlaps the training set");
    }

    std::vector<Example> gather(std::span<const std::size_t> indices) const {
        std::vector<Example> out;
        out.reserve(indices.size());
        for (std::size_t i : indices) out.push_back(train.at(i));
        return out;
    }
};

/// L_val = L_new + lambda * L_prior with L_new the mean validation loss.
class ValidationObjective {
public:
    ValidationObjective(const ToyModel& model, std::vector<Example> val, double lambda,
                        std::optional<CwsdObjective> prior = std::nullopt)
        : model_(&model), val_(std::move(val)), lambda_(lambda), prior_(std::move(prior)) {
        require(lambda_ >= 0.0, "lambda must be non-negative");
        require(!val_.empty(), "validation set is empty");
    }

    double lambda() const { return lambda_; }
    bool has_prior() const { return prior_.has_value(); }
    const CwsdObjective* prior() const { return prior_ ? &*prior_ : nullptr; }
    const std::vector<Example>& val() const { return val_; }
    const ToyModel& model() const { return *model_; }

    template <class T>
    T new_loss(std::span<const T> p) const {
        std::vector<T> terms;
        terms.reserve(val_.size());
        for (const auto& ex : val_) terms.push_back(model_->loss<T>(p, ex));
        return add_all(std::span<const T>(terms)) * (1.0 / static_cast<double>(terms.size()));
    }

    template <class T>
    T prior_loss(std::span<const T> p) const {
        if (!prior_) return p[0] * 0.0;
        return (*prior_)(p);
    }

    template <class T>
    T operator()(std::span<const T> p) const {
        if (!prior_ || lambda_ == 0.0) return new_loss(p);
        return new_loss(p) + lambda_ * prior_loss(p);
    }

private:
    const ToyModel* model_;
    std::vector<Example> val_;
    double lambda_;
    std::optional<CwsdObjective> prior_;
};

inline double eval_val(const ValidationObjective& obj, std::span<const double> point) {
    const double l_new = obj.new_loss(point);
    if (!obj.has_prior()) return l_new;
    return l_new + obj.lambda() * obj.prior_loss(point);
}

struct ValidationGradients {
    ParameterVector v_new;
    ParameterVector v_prior;
    ParameterVector v_val;
};

/// v_new, v_prior and v_val = v_new + lambda * v_prior, assembled componentwise.
inline ValidationGradients grad_val(const ValidationObjective& obj, const ParameterVector& point) {
    point.check_finite("validation point");
    ValidationGradients g;
    g.v_new = gradient([&](auto p) { return obj.new_loss(p); }, point);
    g.v_prior = obj.has_prior() ? gradient([&](auto p) { return obj.prior_loss(p); }, point) : point.zeros_like();
    Vec v(point.size());
    for (std::size_t d = 0; d < v.size(); ++d) v[d] = g.v_new[d] + obj.lambda() * g.v_prior[d];
    g.v_val = point.with_values(std::move(v));
    return g;
}

} // namespace dualsft
