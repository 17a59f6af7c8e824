// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "dualsft/autodiff.hpp"
#include "dualsft/error.hpp"
#include "dualsft/linalg.hpp"
#include "dualsft/parameter_vector.hpp"

namespace dualsft {

enum class ModelKind { softmax_classifier, mlp, tiny_causal_lm, quadratic_regression };

inline std::string to_string(ModelKind kind) {
    switch (kind) {
    case ModelKind::softmax_classifier: return "softmax_classifier";
    case ModelKind::mlp: return "mlp";
    case ModelKind::tiny_causal_lm: return "tiny_causal_lm";
    case ModelKind::quadratic_regression: return "quadratic_regression";
    }
    return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "softmax_classifier") return ModelKind::softmax_classifier;
    if (s == "mlp") return ModelKind::mlp;
    if (s == "tiny_causal_lm") return ModelKind::tiny_causal_lm;
    if (s == "quadratic_regression") return ModelKind::quadratic_regression;
    throw ConfigError("unknown model kind '" + s + "'");
}

inline constexpr int kPadToken = 0;
inline constexpr std::size_t kMaxVocab = 64;
inline constexpr std::size_t kMaxSequence = 16;

/// One training, validation or anchor record. Fields unused by a model kind stay empty.
struct Example {
    Vec x;
    int y = 0;
    double target = 0.0;
    double curvature = 1.0;
    std::vector<int> tokens;
    int response_start = 0;

    bool operator==(const Example&) const = default;
};

/// Layout of one affine map z = W a + b inside the flat parameter vector.
struct AffineLayer {
    std::string name;
    std::size_t out = 0;
    std::size_t in = 0;
    bool has_bias = true;
    std::size_t weight_offset = 0;
    std::size_t bias_offset = 0;

    std::size_t param_count() const { return out * in + (has_bias ? out : 0); }
};

/// Input activation and pre-activation gradient of one affine application.
struct GhostRow {
    Vec activation;
    Vec preact_grad;
};

/// Per-layer rows for one example. Sequence models contribute one row per scored position.
struct ExampleTape {
    std::vector<std::vector<GhostRow>> layers;
};

using GhostTapes = std::vector<ExampleTape>;

/// Collects affine inputs and output nodes during a taped forward pass.
class GhostRecorder {
public:
    void record(std::size_t layer, Vec activation, std::vector<Var> preact) {
        entries_.push_back({layer, std::move(activation), std::move(preact)});
    }

    ExampleTape collect(const Tape& tape, std::size_t layer_count) const {
        ExampleTape out;
        out.layers.resize(layer_count);
        for (const auto& e : entries_) {
            GhostRow row{e.activation, Vec(e.preact.size())};
            for (std::size_t i = 0; i < e.preact.size(); ++i) row.preact_grad[i] = tape.adjoint(e.preact[i]);
            out.layers[e.layer].push_back(std::move(row));
        }
        return out;
    }

private:
    struct Entry {
        std::size_t layer;
        Vec activation;
        std::vector<Var> preact;
    };
    std::vector<Entry> entries_;
};

/// Loss, gradient and ghost tape of one example from a single backward pass.
struct RecordedExample {
    double loss = 0.0;
    Vec gradient;
    ExampleTape tape;
};

/**
 * Small differentiable models built only from affine maps.
 *
 * - softmax_classifier: z = W x + b, cross-entropy.
 * - mlp: z = W2 tanh(W1 x + b1) + b2, cross-entropy.
 * - tiny_causal_lm: next-token logits z_t = W e(x_{t-1}) + b where the
 *   embedding is an affine map without bias applied to a one-hot token.
 *   Cross-entropy is averaged over non-padding response positions.
 * - quadratic_regression: z = w.x + b, loss curvature/2 * (z - target)^2.
 */
class ToyModel {
public:
    static ToyModel softmax_classifier(std::size_t inputs, std::size_t classes, std::uint64_t seed,
                                       double init_scale = 1.0) {
        require(inputs > 0 && classes >= 2, "softmax_classifier needs inputs > 0 and classes >= 2");
        ToyModel m(ModelKind::softmax_classifier, classes);
        m.add_layer("linear", classes, inputs, true);
        m.initialize(seed, init_scale);
        return m;
    }

    static ToyModel mlp(std::size_t inputs, std::size_t hidden, std::size_t classes, std::uint64_t seed,
                        double init_scale = 1.0) {
        require(inputs > 0 && hidden > 0 && classes >= 2, "mlp needs positive sizes and classes >= 2");
        ToyModel m(ModelKind::mlp, classes);
        m.add_layer("fc1", hidden, inputs, true);
        m.add_layer("fc2", classes, hidden, true);
        m.initialize(seed, init_scale);
        return m;
    }

    static ToyModel tiny_causal_lm(std::size_t vocab, std::size_t embed, std::uint64_t seed,
                                   double init_scale = 1.0) {
        require(vocab >= 2 && vocab <= kMaxVocab, "tiny_causal_lm vocabulary must be in [2, 64]");
        require(embed > 0, "tiny_causal_lm needs a positive embedding size");
        ToyModel m(ModelKind::tiny_causal_lm, vocab);
        m.add_layer("embed", embed, vocab, false);
        m.add_layer("out", vocab, embed, true);
        m.initialize(seed, init_scale);
        return m;
    }

    static ToyModel quadratic_regression(std::size_t inputs, std::uint64_t seed, double init_scale = 1.0) {
        require(inputs > 0, "quadratic_regression needs inputs > 0");
        ToyModel m(ModelKind::quadratic_regression, 1);
        m.add_layer("linear", 1, inputs, true);
        m.initialize(seed, init_scale);
        return m;
    }

    ModelKind kind() const { return kind_; }
    const std::vector<AffineLayer>& layers() const { return layers_; }
    std::size_t output_dim() const { return output_dim_; }
    std::size_t dim() const { return params_.size(); }
    std::size_t input_dim() const { return layers_.front().in; }

    const ParameterVector& params() const { return params_; }
    void set_params(const ParameterVector& p) {
        require(p.size() == params_.size() && p.segments() == params_.segments(),
                "parameter layout does not match the model");
        params_ = p;
    }
    void set_values(Vec values) { params_ = params_.with_values(std::move(values)); }

    void set_recording(bool enabled) { recording_ = enabled; }
    bool recording() const { return recording_; }

    /// Throws ConfigError when the example does not fit this model kind.
    void validate(const Example& ex) const {
        if (kind_ == ModelKind::tiny_causal_lm) {
            require(!ex.tokens.empty() && ex.tokens.size() <= kMaxSequence,
                    "sequence length must be in [1, 16]");
            for (int t : ex.tokens)
                require(t >= 0 && static_cast<std::size_t>(t) < output_dim_, "token id out of vocabulary");
            require(!scored_positions(ex).empty(), "sequence has no non-padding response token to score");
        } else {
            require(ex.x.size() == input_dim(), "feature dimension mismatch: expected " +
                                                    std::to_string(input_dim()) + ", got " +
                                                    std::to_string(ex.x.size()));
            if (kind_ != ModelKind::quadratic_regression)
                require(ex.y >= 0 && static_cast<std::size_t>(ex.y) < output_dim_, "label out of range");
        }
    }

    /// Positions t whose token is predicted from token t-1 and counted in the loss.
    static std::vector<std::size_t> scored_positions(const Example& ex) {
        std::vector<std::size_t> out;
        const std::size_t start = static_cast<std::size_t>(std::max(1, ex.response_start));
        for (std::size_t t = start; t < ex.tokens.size(); ++t)
            if (ex.tokens[t] != kPadToken) out.push_back(t);
        return out;
    }

    /// Output logits, one row per scored position (a single row for non-sequence kinds).
    template <class T>
    std::vector<std::vector<T>> logits(std::span<const T> p, const Example& ex, GhostRecorder* rec = nullptr) const {
        validate(ex);
        std::vector<std::vector<T>> rows;
        switch (kind_) {
        case ModelKind::softmax_classifier:
        case ModelKind::quadratic_regression:
            rows.push_back(apply<T>(0, p, std::span<const double>(ex.x), rec));
            break;
        case ModelKind::mlp: {
            std::vector<T> h = apply<T>(0, p, std::span<const double>(ex.x), rec);
            for (auto& hi : h) {
                using std::tanh;
                hi = tanh(hi);
            }
            rows.push_back(apply<T>(1, p, std::span<const T>(h), rec));
            break;
        }
        case ModelKind::tiny_causal_lm:
            for (std::size_t t : scored_positions(ex)) {
                Vec onehot(output_dim_, 0.0);
                onehot[static_cast<std::size_t>(ex.tokens[t - 1])] = 1.0;
                std::vector<T> e = apply<T>(0, p, std::span<const double>(onehot), rec);
                rows.push_back(apply<T>(1, p, std::span<const T>(e), rec));
            }
            break;
        }
        return rows;
    }

    /// Per-example training loss, generic over the scalar type.
    template <class T>
    T loss(std::span<const T> p, const Example& ex, GhostRecorder* rec = nullptr) const {
        const auto rows = logits<T>(p, ex, rec);
        switch (kind_) {
        case ModelKind::quadratic_regression: {
            const T diff = rows[0][0] - ex.target;
            return (0.5 * ex.curvature) * (diff * diff);
        }
        case ModelKind::tiny_causal_lm: {
            const auto targets = scored_positions(ex);
            std::vector<T> terms;
            terms.reserve(rows.size());
            for (std::size_t i = 0; i < rows.size(); ++i)
                terms.push_back(cross_entropy<T>(rows[i], static_cast<std::size_t>(ex.tokens[targets[i]])));
            return add_all(std::span<const T>(terms)) * (1.0 / static_cast<double>(terms.size()));
        }
        default:
            return cross_entropy<T>(rows[0], static_cast<std::size_t>(ex.y));
        }
    }

    double forward_loss(const Example& ex) const { return loss<double>(params_.values(), ex); }

    /// softmax(z / tau) per scored position.
    std::vector<Vec> temperature_probs(std::span<const double> p, const Example& ex, double tau) const {
        if (!(tau > 0.0)) throw ConfigError("temperature must be positive");
        require(kind_ != ModelKind::quadratic_regression, "regression models have no output distribution");
        std::vector<Vec> out;
        for (const auto& z : logits<double>(p, ex)) out.push_back(softmax(z, tau));
        return out;
    }

    std::vector<Vec> temperature_probs(const Example& ex, double tau) const {
        return temperature_probs(params_.values(), ex, tau);
    }

    /// Forward and backward on one example, keeping the affine ghost tape.
    RecordedExample record(std::span<const double> p, const Example& ex) const {
        if (!recording_) throw ConfigError("ghost tape recording is disabled for this model");
        Tape tape;
        std::vector<Var> vars(p.size());
        for (std::size_t d = 0; d < p.size(); ++d) vars[d] = tape.variable(p[d]);
        GhostRecorder rec;
        const Var l = loss<Var>(std::span<const Var>(vars), ex, &rec);
        if (!std::isfinite(l.value())) throw NumericError("loss is not finite");
        tape.backward(l);
        RecordedExample out;
        out.loss = l.value();
        out.gradient.resize(p.size());
        for (std::size_t d = 0; d < p.size(); ++d) out.gradient[d] = tape.adjoint(vars[d]);
        out.tape = rec.collect(tape, layers_.size());
        return out;
    }

    GhostTapes record_ghost_tapes(std::span<const double> p, std::span<const Example> batch) const {
        GhostTapes tapes;
        tapes.reserve(batch.size());
        for (const auto& ex : batch) tapes.push_back(record(p, ex).tape);
        return tapes;
    }

    /// Rebuilds the per-example gradient from a ghost tape: vec(sum eps a^T) followed by sum eps.
    Vec gradient_from_tape(const ExampleTape& tape) const {
        Vec g(dim(), 0.0);
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const AffineLayer& L = layers_[l];
            for (const GhostRow& row : tape.layers[l])
                for (std::size_t o = 0; o < L.out; ++o) {
                    for (std::size_t i = 0; i < L.in; ++i)
                        g[L.weight_offset + o * L.in + i] += row.preact_grad[o] * row.activation[i];
                    if (L.has_bias) g[L.bias_offset + o] += row.preact_grad[o];
                }
        }
        return g;
    }

private:
    ToyModel(ModelKind kind, std::size_t output_dim)
        : kind_(kind), output_dim_(output_dim) {}

    void add_layer(const std::string& name, std::size_t out, std::size_t in, bool bias) {
        AffineLayer L{name, out, in, bias, next_offset_, 0};
        segments_.push_back({name + ".weight", next_offset_, {out, in}});
        next_offset_ += out * in;
        if (bias) {
            L.bias_offset = next_offset_;
            segments_.push_back({name + ".bias", next_offset_, {out}});
            next_offset_ += out;
        }
        layers_.push_back(L);
    }

    void initialize(std::uint64_t seed, double scale) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        Vec v(next_offset_, 0.0);
        for (const auto& L : layers_) {
            const double sd = scale / std::sqrt(static_cast<double>(L.in));
            for (std::size_t i = 0; i < L.out * L.in; ++i) v[L.weight_offset + i] = sd * normal(rng);
        }
        params_ = ParameterVector(std::move(v), segments_);
    }

    template <class T, class A>
    std::vector<T> apply(std::size_t layer, std::span<const T> p, std::span<const A> a, GhostRecorder* rec) const {
        const AffineLayer& L = layers_[layer];
        std::vector<T> z;
        z.reserve(L.out);
        for (std::size_t o = 0; o < L.out; ++o) {
            const T* bias = L.has_bias ? &p[L.bias_offset + o] : nullptr;
            z.push_back(linear(p.subspan(L.weight_offset + o * L.in, L.in), a, bias));
        }
        if constexpr (std::is_same_v<T, Var>) {
            if (rec) {
                Vec act(a.size());
                for (std::size_t i = 0; i < a.size(); ++i) act[i] = value_of(a[i]);
                rec->record(layer, std::move(act), z);
            }
        }
        return z;
    }

    template <class T>
    static T cross_entropy(const std::vector<T>& z, std::size_t label) {
        return log_sum_exp(std::span<const T>(z)) - z[label];
    }

    ModelKind kind_;
    std::size_t output_dim_;
    std::vector<AffineLayer> layers_;
    std::vector<Segment> segments_;
    std::size_t next_offset_ = 0;
    ParameterVector params_;
    bool recording_ = true;
};

} // namespace dualsft
