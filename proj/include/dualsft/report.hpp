// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dualsft/error.hpp"
#include "dualsft/linalg.hpp"
#include "dualsft/pipeline.hpp"

namespace dualsft {

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
    out << j.dump(2) << '\n';
    if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

inline nlohmann::json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

/// "index,score" rows with an explicit index column (e.g. training-set indices for data scores).
inline void write_indexed_scores_csv(const std::filesystem::path& path, std::span<const std::size_t> index,
                                     std::span<const double> scores) {
    require(index.size() == scores.size(), "score and index lengths differ");
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
    out << "index,score\n";
    for (std::size_t i = 0; i < scores.size(); ++i) out << index[i] << ',' << format_double(scores[i]) << '\n';
    if (!out) throw ConfigError("failed writing '" + path.string() + "'");
}

struct ReportOptions {
    std::string command = "run";
    bool scores = true;
    bool masks = true;
    nlohmann::json diagnostics;  // null when no diagnostic ran
};

inline nlohmann::json masks_json(const Run& run) {
    return {{"param_mask", run.param_mask.members},
            {"data_selected", run.data_selected},
            {"warm", run.split.warm},
            {"pool", run.split.pool},
            {"budget_param", run.param_mask.size()},
            {"budget_data", run.data_selected.size()}};
}

/**
 * Writes manifest.json, report.json and, when available, scores_theta.csv,
 * scores_data.csv and masks.json into `dir`. Nothing time- or host-dependent
 * is recorded, so reruns with the same configuration are byte-identical.
 */
inline std::vector<std::string> emit_report(const Run& run, const std::filesystem::path& dir, const ReportOptions& opt) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw ConfigError("cannot create output directory '" + dir.string() + "'");

    std::vector<std::string> files = {"manifest.json", "report.json"};
    const bool have_scores = opt.scores && !run.scores.theta.empty();
    const bool have_masks = opt.masks && run.param_mask.members.size() + run.data_selected.size() > 0;
    if (have_scores) {
        files.push_back("scores_theta.csv");
        files.push_back("scores_data.csv");
    }
    if (have_masks) files.push_back("masks.json");

    nlohmann::json manifest;
    manifest["tool"] = "dualsft";
    manifest["version"] = kVersion;
    manifest["command"] = opt.command;
    manifest["config"] = run.config.to_json();
    manifest["seeds"] = {{"run", run.config.seed},
                         {"data", stream_seed(run.config.seed, kStreamData)},
                         {"model", stream_seed(run.config.seed, kStreamModel)},
                         {"warm_split", stream_seed(run.config.seed, kStreamWarmSplit)},
                         {"warm_order", stream_seed(run.config.seed, kStreamWarmOrder)},
                         {"finetune_order", stream_seed(run.config.seed, kStreamFtOrder)}};
    manifest["sizes"] = {{"dim", run.theta_old.size()},
                         {"train", run.split.train.size()},
                         {"val", run.split.val.size()},
                         {"anchor", run.split.anchor.size()},
                         {"warm", run.split.warm.size()},
                         {"pool", run.split.pool.size()}};
    manifest["segments"] = nlohmann::json::array();
    for (const auto& s : run.theta_old.segments())
        manifest["segments"].push_back({{"name", s.name}, {"offset", s.offset}, {"shape", s.shape}});
    manifest["files"] = files;
    write_json(dir / "manifest.json", manifest);

    if (have_scores) {
        std::vector<std::size_t> coords(run.scores.theta.size());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
        write_indexed_scores_csv(dir / "scores_theta.csv", coords, run.scores.theta);
        write_indexed_scores_csv(dir / "scores_data.csv", run.split.pool, run.scores.data);
    }
    if (have_masks) write_json(dir / "masks.json", masks_json(run));

    nlohmann::json report;
    report["metrics"] = run_metrics(run);
    report["warnings"] = run.warnings;
    report["selection"] = have_masks ? nlohmann::json{{"param_mask_size", run.param_mask.size()},
                                                      {"data_selected_size", run.data_selected.size()},
                                                      {"mode", to_string(run.config.selection)}}
                                     : nlohmann::json(nullptr);
    report["diagnostics"] = opt.diagnostics;
    write_json(dir / "report.json", report);
    return files;
}

} // namespace dualsft
