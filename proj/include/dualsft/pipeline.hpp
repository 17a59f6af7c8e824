// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualsft/cwsd.hpp"
#include "dualsft/data.hpp"
#include "dualsft/error.hpp"
#include "dualsft/linalg.hpp"
#include "dualsft/objectives.hpp"
#include "dualsft/optimizer.hpp"
#include "dualsft/scoring.hpp"
#include "dualsft/surrogate.hpp"
#include "dualsft/tensor_core.hpp"
#include "dualsft/toy_models.hpp"

namespace dualsft {

inline constexpr const char* kVersion = "0.1.0";

enum class SelectionMode { dualsft, random };

inline std::string to_string(SelectionMode m) { return m == SelectionMode::dualsft ? "dualsft" : "random"; }

inline SelectionMode parse_selection_mode(const std::string& s) {
    if (s == "dualsft") return SelectionMode::dualsft;
    if (s == "random") return SelectionMode::random;
    throw ConfigError("unknown selection mode '" + s + "' (expected dualsft or random)");
}

enum class StepRule { adamw, sgd };

inline std::string to_string(StepRule r) { return r == StepRule::adamw ? "adamw" : "sgd"; }

inline StepRule parse_step_rule(const std::string& s) {
    if (s == "adamw") return StepRule::adamw;
    if (s == "sgd") return StepRule::sgd;
    throw ConfigError("unknown optimizer '" + s + "' (expected adamw or sgd)");
}

struct RunConfig {
    std::uint64_t seed = 0;

    // data
    TaskKind task = TaskKind::classification;
    std::string train_path;  // JSONL; empty selects the synthetic generator
    std::string val_path;
    std::string anchor_path;
    std::size_t n_train = 1000;
    std::size_t n_val = 200;
    std::size_t n_anchor = 256;
    std::size_t input_dim = 16;
    std::size_t classes = 4;
    double separation = 1.5;
    double label_noise = 0.0;
    std::size_t vocab = 16;
    std::size_t seq_len = 12;

    // model; empty picks the task's default kind
    std::string model;
    std::size_t hidden = 16;
    std::size_t embed = 8;
    double init_scale = 1.0;

    // method
    double lambda = 0.8;
    double tau = 1.0;
    double r_warm = 0.05;
    int warm_epochs = 1;
    double budget_data = 0.10;
    double budget_param = 0.05;
    double eta_ft = 0.05;
    int ft_epochs = 0;  // 0: 3 for classification and regression, 2 for lm
    std::size_t batch_size = 16;
    double weight_decay = 0.0;
    Order order = Order::diag;
    SelectionMode selection = SelectionMode::dualsft;

    // diagnostics
    std::size_t fidelity_subsets = 32;
    std::size_t fidelity_subset_size = 16;
    int fidelity_steps = 1;
    StepRule fidelity_optimizer = StepRule::sgd;
    int drift_steps = 200;
    std::size_t slice_begin = 0;
    std::size_t slice_end = 0;  // 0: min(D, 512)

    int finetune_epochs() const {
        if (ft_epochs > 0) return ft_epochs;
        return task == TaskKind::lm ? 2 : 3;
    }

    ModelKind model_kind() const {
        if (!model.empty()) return parse_model_kind(model);
        switch (task) {
        case TaskKind::classification: return ModelKind::softmax_classifier;
        case TaskKind::regression: return ModelKind::quadratic_regression;
        case TaskKind::lm: return ModelKind::tiny_causal_lm;
        }
        return ModelKind::softmax_classifier;
    }

    void validate() const {
        require(budget_data >= 0.0 && budget_data <= 1.0, "data budget must be in [0, 1]");
        require(budget_param >= 0.0 && budget_param <= 1.0, "parameter budget must be in [0, 1]");
        require(r_warm >= 0.0 && r_warm < 1.0, "warmup fraction must be in [0, 1)");
        require(eta_ft > 0.0, "fine-tuning learning rate must be positive");
        require(lambda >= 0.0, "lambda must be non-negative");
        require(tau > 0.0, "temperature must be positive");
        require(batch_size > 0, "batch size must be positive");
        require(warm_epochs >= 0 && ft_epochs >= 0, "epoch counts must be non-negative");
        require(fidelity_steps >= 1 && drift_steps >= 1, "diagnostic step counts must be positive");
        require(!(train_path.empty() != val_path.empty()), "--train and --val must be given together");
        (void)model_kind();
    }

    nlohmann::json to_json() const {
        return {{"seed", seed},
                {"task", to_string(task)},
                {"train_path", train_path},
                {"val_path", val_path},
                {"anchor_path", anchor_path},
                {"n_train", n_train},
                {"n_val", n_val},
                {"n_anchor", n_anchor},
                {"input_dim", input_dim},
                {"classes", classes},
                {"separation", separation},
                {"label_noise", label_noise},
                {"vocab", vocab},
                {"seq_len", seq_len},
                {"model", to_string(model_kind())},
                {"hidden", hidden},
                {"embed", embed},
                {"init_scale", init_scale},
                {"lambda", lambda},
                {"tau", tau},
                {"r_warm", r_warm},
                {"warm_epochs", warm_epochs},
                {"budget_data", budget_data},
                {"budget_param", budget_param},
                {"eta_ft", eta_ft},
                {"ft_epochs", finetune_epochs()},
                {"batch_size", batch_size},
                {"weight_decay", weight_decay},
                {"order", to_string(order)},
                {"selection", to_string(selection)},
                {"fidelity_subsets", fidelity_subsets},
                {"fidelity_subset_size", fidelity_subset_size},
                {"fidelity_steps", fidelity_steps},
                {"fidelity_optimizer", to_string(fidelity_optimizer)},
                {"drift_steps", drift_steps},
                {"slice_begin", slice_begin},
                {"slice_end", slice_end}};
    }
};

// Independent seeded streams derived from the run seed.
inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream)};
    std::uint32_t out[2];
    seq.generate(out, out + 2);
    return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

enum Stream : std::uint64_t { kStreamData = 1, kStreamModel, kStreamWarmSplit, kStreamWarmOrder, kStreamFtOrder,
                              kStreamRandomSelect, kStreamDiagnostics };

/// Mean loss over `batch` at `params`, generic over the scalar type.
template <class T>
T batch_loss(const ToyModel& model, std::span<const T> params, std::span<const Example> batch) {
    std::vector<T> terms;
    terms.reserve(batch.size());
    for (const auto& ex : batch) terms.push_back(model.loss<T>(params, ex));
    return add_all(std::span<const T>(terms)) * (1.0 / static_cast<double>(terms.size()));
}

inline double mean_loss(const ToyModel& model, std::span<const double> params, std::span<const Example> data) {
    if (data.empty()) return 0.0;
    return batch_loss<double>(model, params, data);
}

/// Epochs of mini-batch optimizer steps over `data` in a seeded shuffled order.
inline std::size_t train_epochs(const ToyModel& model, ParameterVector& params, OptimizerState& state,
                                std::span<const Example> data, int epochs, std::size_t batch_size,
                                std::uint64_t seed) {
    if (data.empty()) return 0;
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> order(data.size());
    std::vector<Example> batch;
    std::size_t steps = 0;
    for (int e = 0; e < epochs; ++e) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += batch_size) {
            batch.clear();
            for (std::size_t i = start; i < std::min(order.size(), start + batch_size); ++i)
                batch.push_back(data[order[i]]);
            const auto grad = gradient(
                [&](auto p) { return batch_loss(model, p, std::span<const Example>(batch)); }, params);
            masked_step(state, params, grad.values());
            ++steps;
        }
    }
    return steps;
}

struct WarmupResult {
    ParameterVector theta_bar;
    Vec c_hat;
    OptimizerState state;
    bool degenerate = false;
    std::size_t steps = 0;
};

/// Unmasked warmup from theta_old. An empty warmup set returns theta_old with an epsilon-only proxy.
inline WarmupResult warmup(const ToyModel& model, const ParameterVector& theta_old, std::span<const Example> warm,
                           const RunConfig& cfg) {
    AdamWConfig opt;
    opt.lr = cfg.eta_ft;
    opt.weight_decay = cfg.weight_decay;
    WarmupResult out{theta_old, {}, OptimizerState::create(theta_old.size(), opt), false, 0};
    if (warm.empty() || cfg.warm_epochs == 0) {
        out.degenerate = true;
        out.c_hat.assign(theta_old.size(), opt.eps);
        return out;
    }
    out.steps = train_epochs(model, out.theta_bar, out.state, warm, cfg.warm_epochs, cfg.batch_size,
                             stream_seed(cfg.seed, kStreamWarmOrder));
    out.c_hat = curvature_proxy(out.state);
    return out;
}

struct GradSumResult {
    Vec total;
    GhostTapes tapes;
    PerSampleGradients grads;
    std::size_t n_sc = 0;
};

/// First pass over the pool: G in ascending order, with ghost tapes kept for the second pass.
inline GradSumResult grad_sum(const ToyModel& model, const ParameterVector& theta_bar, std::span<const Example> pool) {
    require(!pool.empty(), "scoring pool is empty");
    GradSumResult out;
    out.n_sc = pool.size();
    out.total.assign(theta_bar.size(), 0.0);
    out.grads.rows = Matrix(pool.size(), theta_bar.size());
    out.grads.checkpoint_id = "theta_bar";
    out.tapes.reserve(pool.size());
    for (std::size_t n = 0; n < pool.size(); ++n) {
        RecordedExample r = model.record(theta_bar.values(), pool[n]);
        theta_bar.check_finite(r.gradient, "per-sample gradient of pool example " + std::to_string(n));
        axpy(1.0, r.gradient, out.total);
        std::copy(r.gradient.begin(), r.gradient.end(), out.grads.rows.row(n).begin());
        out.tapes.push_back(std::move(r.tape));
    }
    return out;
}

/// Everything one run produces, stage by stage.
struct Run {
    RunConfig config;
    std::unique_ptr<ToyModel> model;
    DatasetSplit split;
    std::vector<std::size_t> flipped;
    ParameterVector theta_old;
    std::unique_ptr<ValidationObjective> objective;
    std::vector<std::string> warnings;

    // warmup
    WarmupResult warm;
    // scoring
    GradSumResult pool;
    double eta_sc = 0.0;
    ValidationGradients vgrads;
    bool prior_degenerate = false;
    ProjectionVector projection;
    ScorePair scores;
    // selection
    Selection param_mask{Side::parameter, {}};
    Selection pool_selection{Side::data, {}};  // indices into the pool
    std::vector<std::size_t> data_selected;    // indices into train
    // fine-tuning
    ParameterVector theta_star;
    std::size_t ft_steps = 0;

    std::vector<Example> pool_examples() const { return split.gather(split.pool); }
    std::vector<Example> selected_examples() const { return split.gather(data_selected); }
};

template <class F>
void run_stage(const char* name, F&& f) {
    try {
        f();
    } catch (const NumericError& e) {
        throw NumericError(std::string("stage '") + name + "': " + e.what());
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("stage '") + name + "': " + e.what());
    }
}

/// Loads or generates the data, builds theta_old and the validation objective.
inline std::unique_ptr<Run> prepare_run(const RunConfig& cfg) {
    cfg.validate();
    auto run = std::make_unique<Run>();
    run->config = cfg;
    run_stage("prepare", [&] {
        if (cfg.train_path.empty()) {
            SynthSpec spec;
            spec.task = cfg.task;
            spec.n_train = cfg.n_train;
            spec.n_val = cfg.n_val;
            spec.n_anchor = cfg.task == TaskKind::regression ? 0 : cfg.n_anchor;
            spec.input_dim = cfg.input_dim;
            spec.classes = cfg.classes;
            spec.separation = cfg.separation;
            spec.label_noise = cfg.label_noise;
            spec.vocab = cfg.vocab;
            spec.seq_len = cfg.seq_len;
            spec.seed = stream_seed(cfg.seed, kStreamData);
            SyntheticData data = synth_dataset(spec);
            run->split = std::move(data.split);
            run->flipped = std::move(data.flipped);
        } else {
            run->split.train = load_jsonl(cfg.train_path);
            run->split.val = load_jsonl(cfg.val_path);
            if (!cfg.anchor_path.empty()) run->split.anchor = load_jsonl(cfg.anchor_path);
        }
        require(!run->split.train.empty(), "training set is empty");
        require(!run->split.val.empty(), "validation set is empty");

        const ModelKind kind = cfg.model_kind();
        const std::uint64_t mseed = stream_seed(cfg.seed, kStreamModel);
        const Example& first = run->split.train.front();
        std::size_t classes = cfg.classes;
        if (!cfg.train_path.empty() && kind != ModelKind::tiny_causal_lm && kind != ModelKind::quadratic_regression) {
            int max_label = 1;
            for (const auto& ex : run->split.train) max_label = std::max(max_label, ex.y);
            for (const auto& ex : run->split.val) max_label = std::max(max_label, ex.y);
            classes = static_cast<std::size_t>(max_label) + 1;
        }
        switch (kind) {
        case ModelKind::softmax_classifier:
            run->model = std::make_unique<ToyModel>(ToyModel::softmax_classifier(first.x.size(), classes, mseed, cfg.init_scale));
            break;
        case ModelKind::mlp:
            run->model = std::make_unique<ToyModel>(ToyModel::mlp(first.x.size(), cfg.hidden, classes, mseed, cfg.init_scale));
            break;
        case ModelKind::tiny_causal_lm: {
            std::size_t vocab = cfg.vocab;
            if (!cfg.train_path.empty()) {
                int max_tok = 1;
                for (const auto& ex : run->split.train)
                    for (int t : ex.tokens) max_tok = std::max(max_tok, t);
                vocab = static_cast<std::size_t>(max_tok) + 1;
            }
            run->model = std::make_unique<ToyModel>(ToyModel::tiny_causal_lm(vocab, cfg.embed, mseed, cfg.init_scale));
            break;
        }
        case ModelKind::quadratic_regression:
            run->model = std::make_unique<ToyModel>(ToyModel::quadratic_regression(first.x.size(), mseed, cfg.init_scale));
            break;
        }
        for (const auto& ex : run->split.train) run->model->validate(ex);
        for (const auto& ex : run->split.val) run->model->validate(ex);
        if (kind == ModelKind::quadratic_regression) run->split.anchor.clear();
        for (const auto& ex : run->split.anchor) run->model->validate(ex);

        // Seeded warmup split.
        const std::size_t n = run->split.train.size();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        std::mt19937_64 rng(stream_seed(cfg.seed, kStreamWarmSplit));
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(budget_count(cfg.r_warm, n));
        run->split.warm = std::move(idx);
        run->split.finalize();
        require(!run->split.pool.empty(), "scoring pool is empty after removing the warmup split");

        run->theta_old = run->model->params();
        std::optional<CwsdObjective> prior;
        if (!run->split.anchor.empty())
            prior.emplace(*run->model, CwsdConfig{cfg.tau, run->split.anchor, run->theta_old.values()});
        else if (cfg.lambda > 0.0)
            run->warnings.push_back("no anchor inputs; the preservation term is zero");
        run->objective = std::make_unique<ValidationObjective>(*run->model, run->split.val, cfg.lambda, std::move(prior));
    });
    return run;
}

/// Warmup, gradient sum, validation directions, projection vector and both score vectors.
inline void score_stage(Run& run) {
    const RunConfig& cfg = run.config;
    const ToyModel& model = *run.model;
    run_stage("warmup", [&] {
        const auto warm = run.split.gather(run.split.warm);
        run.warm = warmup(model, run.theta_old, warm, cfg);
        if (run.warm.degenerate) run.warnings.push_back("empty warmup: theta_bar = theta_old and c_hat = eps_adam");
    });
    run_stage("grad_sum", [&] {
        const auto pool = run.pool_examples();
        run.pool = grad_sum(model, run.warm.theta_bar, pool);
        run.eta_sc = cfg.eta_ft / static_cast<double>(run.pool.n_sc);
    });
    run_stage("validation_gradients", [&] {
        run.vgrads = grad_val(*run.objective, run.warm.theta_bar);
        if (run.objective->has_prior()) {
            const Vec& vp = run.vgrads.v_prior.values();
            run.prior_degenerate = std::all_of(vp.begin(), vp.end(), [](double x) { return x == 0.0; });
            if (run.prior_degenerate) run.warnings.push_back("CWSD direction is zero at theta_bar");
        }
    });
    run_stage("projection", [&] {
        const Vec& v_new = run.vgrads.v_new.values();
        const Vec& v_prior = run.vgrads.v_prior.values();
        const Vec& g = run.pool.total;
        switch (cfg.order) {
        case Order::diag:
            run.projection = build_projection(run.eta_sc, v_new, v_prior, cfg.lambda, run.warm.c_hat, g);
            break;
        case Order::first:
            run.projection = build_projection(run.eta_sc, v_new, v_prior, cfg.lambda,
                                              Vec(g.size(), 1.0), Vec(g.size(), 0.0));
            run.projection.c_hat.clear();
            run.projection.total_grad = g;
            break;
        case Order::full: {
            run.projection = build_projection(run.eta_sc, v_new, v_prior, cfg.lambda,
                                              Vec(g.size(), 1.0), Vec(g.size(), 0.0));
            const Vec hg = hvp(*run.objective, run.warm.theta_bar, g).values();
            const double half_eta2 = 0.5 * run.eta_sc * run.eta_sc;
            for (std::size_t d = 0; d < g.size(); ++d) run.projection.u[d] -= half_eta2 * hg[d];
            run.projection.c_hat.clear();
            run.projection.total_grad = g;
            break;
        }
        }
        run.theta_old.check_finite(run.projection.u, "projection vector");
    });
    run_stage("scores", [&] {
        run.scores.order = cfg.order;
        run.scores.theta = hadamard(run.projection.u, run.pool.total);
        run.scores.data = ghost_dot(run.projection.u, model, run.pool.tapes);
    });
}

/// Signed top-k parameters and top-b pool examples (or matched-size random sets).
inline void select_stage(Run& run) {
    const RunConfig& cfg = run.config;
    run_stage("select", [&] {
        const std::size_t dim = run.theta_old.size();
        const std::size_t n_sc = run.pool.n_sc;
        const std::size_t k = budget_count(cfg.budget_param, dim);
        const std::size_t b = budget_count(cfg.budget_data, n_sc);
        if (cfg.selection == SelectionMode::dualsft) {
            run.param_mask = topk_signed(run.scores.theta, k, Side::parameter);
            run.pool_selection = topk_signed(run.scores.data, b, Side::data);
        } else {
            std::mt19937_64 rng(stream_seed(cfg.seed, kStreamRandomSelect));
            auto sample = [&](std::size_t universe, std::size_t count, Side side) {
                std::vector<std::size_t> idx(universe);
                std::iota(idx.begin(), idx.end(), std::size_t{0});
                std::shuffle(idx.begin(), idx.end(), rng);
                idx.resize(count);
                return Selection::make(side, std::move(idx), universe);
            };
            run.param_mask = sample(dim, k, Side::parameter);
            run.pool_selection = sample(n_sc, b, Side::data);
        }
        run.data_selected.clear();
        for (std::size_t i : run.pool_selection.members) run.data_selected.push_back(run.split.pool[i]);
    });
}

/// Masked fine-tuning restarted from theta_old on the given training indices.
inline ParameterVector masked_finetune(const Run& run, const Selection& mask, std::span<const std::size_t> data,
                                       std::size_t* steps = nullptr) {
    const RunConfig& cfg = run.config;
    AdamWConfig opt;
    opt.lr = cfg.eta_ft;
    opt.weight_decay = cfg.weight_decay;
    OptimizerState state = OptimizerState::create(run.theta_old.size(), opt, mask);
    ParameterVector theta = run.theta_old;
    const auto examples = run.split.gather(data);
    const std::size_t n = train_epochs(*run.model, theta, state, examples, cfg.finetune_epochs(), cfg.batch_size,
                                       stream_seed(cfg.seed, kStreamFtOrder));
    if (steps) *steps = n;
    return theta;
}

inline void finetune_stage(Run& run) {
    run_stage("masked_finetune", [&] { run.theta_star = masked_finetune(run, run.param_mask, run.data_selected, &run.ft_steps); });
}

/// Algorithm order: warmup, pool, G, eta_sc, v_new, CWSD, u, scores, top-k/top-b, masked fine-tuning from theta_old.
inline std::unique_ptr<Run> run_dualsft(const RunConfig& cfg) {
    auto run = prepare_run(cfg);
    score_stage(*run);
    select_stage(*run);
    finetune_stage(*run);
    return run;
}

/// Losses and selection statistics of a finished (or partially finished) run.
inline nlohmann::json run_metrics(const Run& run) {
    const ToyModel& model = *run.model;
    const ValidationObjective& obj = *run.objective;
    nlohmann::json m;
    auto losses = [&](const ParameterVector& p) {
        nlohmann::json j;
        j["l_new"] = obj.new_loss<double>(p.values());
        j["l_prior"] = obj.has_prior() ? obj.prior_loss<double>(p.values()) : 0.0;
        j["l_val"] = eval_val(obj, p.values());
        j["train_pool"] = mean_loss(model, p.values(), run.pool_examples());
        return j;
    };
    m["theta_old"] = losses(run.theta_old);
    if (run.warm.theta_bar.size()) {
        m["theta_bar"] = losses(run.warm.theta_bar);
        m["warmup_steps"] = run.warm.steps;
        m["eta_sc"] = run.eta_sc;
        m["n_sc"] = run.pool.n_sc;
    }
    if (run.theta_star.size()) {
        m["theta_star"] = losses(run.theta_star);
        m["finetune_steps"] = run.ft_steps;
    }
    if (!run.pool_selection.members.empty() && run.pool.n_sc > 0) {
        // Mean <v_val, g_n> on the selection against the pool.
        const Vec& v = run.vgrads.v_val.values();
        double sel = 0.0, all = 0.0;
        for (std::size_t n = 0; n < run.pool.n_sc; ++n) {
            const double a = dot(v, run.pool.grads.row(n));
            all += a;
            if (run.pool_selection.contains(n)) sel += a;
        }
        m["alignment_selected"] = sel / static_cast<double>(run.pool_selection.size());
        m["alignment_pool"] = all / static_cast<double>(run.pool.n_sc);
    }
    if (!run.flipped.empty()) {
        std::size_t hit = 0;
        for (std::size_t i : run.data_selected)
            if (std::binary_search(run.flipped.begin(), run.flipped.end(), i)) ++hit;
        m["flipped_in_selection"] = hit;
        m["flipped_share_selection"] =
            run.data_selected.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(run.data_selected.size());
        m["flipped_total"] = run.flipped.size();
    }
    m["param_mask_size"] = run.param_mask.size();
    m["data_selected_size"] = run.data_selected.size();
    m["prior_degenerate"] = run.prior_degenerate;
    return m;
}

} // namespace dualsft
