// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualsft/error.hpp"
#include "dualsft/linalg.hpp"
#include "dualsft/objectives.hpp"
#include "dualsft/toy_models.hpp"

namespace dualsft {

// ---------------------------------------------------------------- JSONL

/// Classification `{"x":[..],"y":k}`, regression `{"x":[..],"target":t,"curvature":c}`,
/// or sequence `{"tokens":[..],"response_start":s}`.
inline nlohmann::json example_to_json(const Example& ex, ModelKind kind) {
    nlohmann::json j;
    if (kind == ModelKind::tiny_causal_lm) {
        j["tokens"] = ex.tokens;
        j["response_start"] = ex.response_start;
    } else if (kind == ModelKind::quadratic_regression) {
        j["x"] = ex.x;
        j["target"] = ex.target;
        j["curvature"] = ex.curvature;
    } else {
        j["x"] = ex.x;
        j["y"] = ex.y;
    }
    return j;
}

inline Example example_from_json(const nlohmann::json& j) {
    Example ex;
    if (j.contains("tokens")) {
        ex.tokens = j.at("tokens").get<std::vector<int>>();
        ex.response_start = j.value("response_start", 0);
        return ex;
    }
    require(j.contains("x"), "record has neither 'x' nor 'tokens'");
    ex.x = j.at("x").get<Vec>();
    ex.y = j.value("y", 0);
    ex.target = j.value("target", 0.0);
    ex.curvature = j.value("curvature", 1.0);
    return ex;
}

inline std::vector<Example> load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open dataset '" + path.string() + "'");
    std::vector<Example> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            out.push_back(example_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        } catch (const ConfigError& e) {
            throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline void save_jsonl(const std::filesystem::path& path, const std::vector<Example>& examples, ModelKind kind) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
    for (const auto& ex : examples) out << example_to_json(ex, kind).dump() << '\n';
    if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

// ---------------------------------------------------------------- synthetic tasks

enum class TaskKind { classification, regression, lm };

inline std::string to_string(TaskKind t) {
    switch (t) {
    case TaskKind::classification: return "classification";
    case TaskKind::regression: return "regression";
    case TaskKind::lm: return "lm";
    }
    return "?";
}

inline TaskKind parse_task(const std::string& s) {
    if (s == "classification") return TaskKind::classification;
    if (s == "regression") return TaskKind::regression;
    if (s == "lm") return TaskKind::lm;
    throw ConfigError("unknown task '" + s + "' (expected classification, regression or lm)");
}

struct SynthSpec {
    TaskKind task = TaskKind::classification;
    std::size_t n_train = 1000;
    std::size_t n_val = 200;
    std::size_t n_anchor = 256;
    std::size_t input_dim = 16;
    std::size_t classes = 4;
    double separation = 1.5;   // class-mean scale relative to unit noise
    double label_noise = 0.0;  // fraction of training labels flipped
    std::size_t vocab = 16;
    std::size_t seq_len = 12;
    std::uint64_t seed = 0;
};

struct SyntheticData {
    DatasetSplit split;
    std::vector<std::size_t> flipped;  // training indices with planted wrong labels
};

namespace detail {

inline SyntheticData synth_classification(const SynthSpec& s, std::mt19937_64& rng) {
    require(s.classes >= 2 && s.input_dim > 0, "classification needs classes >= 2 and input_dim > 0");
    require(s.label_noise >= 0.0 && s.label_noise <= 1.0, "label noise must be in [0, 1]");
    std::normal_distribution<double> normal;
    std::vector<Vec> means(s.classes, Vec(s.input_dim));
    for (auto& m : means)
        for (double& v : m) v = s.separation * normal(rng) / std::sqrt(static_cast<double>(s.input_dim)) * 2.0;
    std::uniform_int_distribution<std::size_t> pick(0, s.classes - 1);
    auto draw = [&] {
        Example ex;
        ex.y = static_cast<int>(pick(rng));
        ex.x.resize(s.input_dim);
        for (std::size_t i = 0; i < s.input_dim; ++i) ex.x[i] = means[static_cast<std::size_t>(ex.y)][i] + normal(rng);
        return ex;
    };
    SyntheticData out;
    for (std::size_t n = 0; n < s.n_train; ++n) out.split.train.push_back(draw());
    for (std::size_t n = 0; n < s.n_val; ++n) out.split.val.push_back(draw());
    for (std::size_t n = 0; n < s.n_anchor; ++n) out.split.anchor.push_back(draw());

    // Exactly round(noise * N) flipped examples at seeded positions, each moved to a different class.
    const auto flips = static_cast<std::size_t>(std::llround(s.label_noise * static_cast<double>(s.n_train)));
    std::vector<std::size_t> idx(s.n_train);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(flips);
    std::sort(idx.begin(), idx.end());
    std::uniform_int_distribution<std::size_t> shift(1, s.classes - 1);
    for (std::size_t n : idx) {
        auto& y = out.split.train[n].y;
        y = static_cast<int>((static_cast<std::size_t>(y) + shift(rng)) % s.classes);
    }
    out.flipped = std::move(idx);
    return out;
}

inline SyntheticData synth_regression(const SynthSpec& s, std::mt19937_64& rng) {
    require(s.input_dim > 0, "regression needs input_dim > 0");
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> curv(0.5, 2.0);
    Vec w(s.input_dim);
    for (double& v : w) v = normal(rng) / std::sqrt(static_cast<double>(s.input_dim));
    auto draw = [&] {
        Example ex;
        ex.x.resize(s.input_dim);
        for (double& v : ex.x) v = normal(rng);
        ex.target = dot(w, ex.x) + 0.1 * normal(rng);
        ex.curvature = curv(rng);
        return ex;
    };
    SyntheticData out;
    for (std::size_t n = 0; n < s.n_train; ++n) out.split.train.push_back(draw());
    for (std::size_t n = 0; n < s.n_val; ++n) out.split.val.push_back(draw());
    return out;
}

/// Sequences from a seeded sparse Markov chain over tokens 1..V-1, a 3-token prompt,
/// and trailing padding on a random share of sequences.
inline SyntheticData synth_lm(const SynthSpec& s, std::mt19937_64& rng) {
    require(s.vocab >= 3 && s.vocab <= kMaxVocab, "lm vocabulary must be in [3, 64]");
    require(s.seq_len >= 5 && s.seq_len <= kMaxSequence, "lm sequence length must be in [5, 16]");
    const std::size_t v = s.vocab;
    std::vector<std::discrete_distribution<std::size_t>> next;
    std::gamma_distribution<double> concentration(0.3, 1.0);
    for (std::size_t a = 0; a < v; ++a) {
        Vec w(v - 1);
        for (double& x : w) x = concentration(rng) + 1e-6;
        next.emplace_back(w.begin(), w.end());
    }
    std::uniform_int_distribution<std::size_t> first(1, v - 1);
    std::uniform_int_distribution<std::size_t> pad(0, 3);
    auto draw = [&] {
        Example ex;
        ex.response_start = 3;
        ex.tokens.resize(s.seq_len, kPadToken);
        ex.tokens[0] = static_cast<int>(first(rng));
        const std::size_t pads = pad(rng) == 0 ? 2 : 0;
        for (std::size_t t = 1; t < s.seq_len - pads; ++t)
            ex.tokens[t] = static_cast<int>(1 + next[static_cast<std::size_t>(ex.tokens[t - 1])](rng));
        return ex;
    };
    SyntheticData out;
    for (std::size_t n = 0; n < s.n_train; ++n) out.split.train.push_back(draw());
    for (std::size_t n = 0; n < s.n_val; ++n) out.split.val.push_back(draw());
    while (out.split.anchor.size() < s.n_anchor) {
        Example ex = draw();
        if (std::find(out.split.train.begin(), out.split.train.end(), ex) == out.split.train.end())
            out.split.anchor.push_back(std::move(ex));
    }
    return out;
}

} // namespace detail

/// Seeded synthetic train/val/anchor split. Warmup indices are left to the caller.
inline SyntheticData synth_dataset(const SynthSpec& spec) {
    require(spec.n_train > 0 && spec.n_val > 0, "synthetic task needs n_train > 0 and n_val > 0");
    std::mt19937_64 rng(spec.seed);
    switch (spec.task) {
    case TaskKind::classification: return detail::synth_classification(spec, rng);
    case TaskKind::regression: return detail::synth_regression(spec, rng);
    case TaskKind::lm: return detail::synth_lm(spec, rng);
    }
    throw ConfigError("unknown synthetic task");
}

} // namespace dualsft
