// SPDX-License-Identifier: Apache-2.0
//
// dualsft: command-line front end.
//
//   dualsft run|score|select|finetune [flags] --out DIR
//   dualsft diagnose KIND [flags] --out DIR
//   dualsft synth [flags] --out DIR
//
// Exit codes: 0 success, 2 configuration error, 3 numeric failure, 1 other.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dualsft/dualsft.hpp"

namespace fs = std::filesystem;
using namespace dualsft;

namespace {

struct Flags {
    RunConfig cfg;
    std::string out = "dualsft_out";
    std::string task = "classification";
    std::string order = "diag";
    std::string selection = "dualsft";
    std::string fidelity_optimizer = "sgd";
    std::string masks;
    std::string kind;

    RunConfig resolve() {
        cfg.task = parse_task(task);
        cfg.order = parse_order(order);
        cfg.selection = parse_selection_mode(selection);
        cfg.fidelity_optimizer = parse_step_rule(fidelity_optimizer);
        cfg.validate();
        return cfg;
    }
};

void add_config_flags(CLI::App* app, Flags& f) {
    RunConfig& c = f.cfg;
    app->add_option("--seed", c.seed, "Run seed")->capture_default_str();
    app->add_option("--out", f.out, "Output directory")->capture_default_str();
    app->add_option("--task", f.task, "Synthetic task: classification, regression or lm")->capture_default_str();
    app->add_option("--train", c.train_path, "Training JSONL (replaces the synthetic generator)");
    app->add_option("--val", c.val_path, "Validation JSONL");
    app->add_option("--anchor", c.anchor_path, "Anchor JSONL for the preservation term");
    app->add_option("--n-train", c.n_train)->capture_default_str();
    app->add_option("--n-val", c.n_val)->capture_default_str();
    app->add_option("--n-anchor", c.n_anchor)->capture_default_str();
    app->add_option("--input-dim", c.input_dim)->capture_default_str();
    app->add_option("--classes", c.classes)->capture_default_str();
    app->add_option("--separation", c.separation)->capture_default_str();
    app->add_option("--label-noise", c.label_noise, "Fraction of flipped training labels")->capture_default_str();
    app->add_option("--vocab", c.vocab)->capture_default_str();
    app->add_option("--seq-len", c.seq_len)->capture_default_str();
    app->add_option("--model", c.model, "softmax_classifier, mlp, tiny_causal_lm or quadratic_regression");
    app->add_option("--hidden", c.hidden)->capture_default_str();
    app->add_option("--embed", c.embed)->capture_default_str();
    app->add_option("--init-scale", c.init_scale)->capture_default_str();
    app->add_option("--lambda", c.lambda, "Preservation weight")->capture_default_str();
    app->add_option("--tau", c.tau, "Distillation temperature")->capture_default_str();
    app->add_option("--r-warm", c.r_warm, "Warmup fraction of the training set")->capture_default_str();
    app->add_option("--warm-epochs", c.warm_epochs)->capture_default_str();
    app->add_option("--budget-data", c.budget_data, "Data budget b (fraction of the pool)")->capture_default_str();
    app->add_option("--budget-param", c.budget_param, "Parameter budget k (fraction of D)")->capture_default_str();
    app->add_option("--eta-ft", c.eta_ft, "Fine-tuning learning rate")->capture_default_str();
    app->add_option("--ft-epochs", c.ft_epochs, "0 picks 3 (classification, regression) or 2 (lm)")->capture_default_str();
    app->add_option("--batch-size", c.batch_size)->capture_default_str();
    app->add_option("--weight-decay", c.weight_decay)->capture_default_str();
    app->add_option("--order", f.order, "Scoring order: first, diag or full")->capture_default_str();
    app->add_option("--selection", f.selection, "dualsft or random")->capture_default_str();
    app->add_option("--fidelity-subsets", c.fidelity_subsets)->capture_default_str();
    app->add_option("--fidelity-subset-size", c.fidelity_subset_size)->capture_default_str();
    app->add_option("--fidelity-steps", c.fidelity_steps)->capture_default_str();
    app->add_option("--fidelity-optimizer", f.fidelity_optimizer, "sgd or adamw")->capture_default_str();
    app->add_option("--drift-steps", c.drift_steps)->capture_default_str();
    app->add_option("--slice-begin", c.slice_begin)->capture_default_str();
    app->add_option("--slice-end", c.slice_end, "0 picks min(D, 512)")->capture_default_str();
}

void save_checkpoint(const fs::path& path, const ParameterVector& p, const std::string& name, const RunConfig& cfg) {
    FlatRecord rec;
    rec.meta = {{"name", name}, {"model", to_string(cfg.model_kind())}, {"seed", std::to_string(cfg.seed)}};
    rec.values = p;
    save_flat(path, rec);
}

void print_summary(const fs::path& out, const std::vector<std::string>& files) {
    std::cout << "wrote";
    for (const auto& f : files) std::cout << ' ' << (out / f).string();
    std::cout << '\n';
}

int cmd_pipeline(const std::string& command, Flags& f) {
    const RunConfig cfg = f.resolve();
    const fs::path out(f.out);
    auto run = prepare_run(cfg);
    ReportOptions opt;
    opt.command = command;

    if (command == "finetune") {
        Selection mask = Selection::all(Side::parameter, run->theta_old.size());
        std::vector<std::size_t> data(run->split.train.size());
        for (std::size_t i = 0; i < data.size(); ++i) data[i] = i;
        if (!f.masks.empty()) {
            const auto m = read_json(f.masks);
            mask = Selection::make(Side::parameter, m.at("param_mask").get<std::vector<std::size_t>>(),
                                   run->theta_old.size());
            data = m.at("data_selected").get<std::vector<std::size_t>>();
            for (std::size_t i : data) require(i < run->split.train.size(), "selected index out of range");
        }
        run->param_mask = mask;
        run->data_selected = data;
        run_stage("masked_finetune", [&] { run->theta_star = masked_finetune(*run, mask, data, &run->ft_steps); });
        opt.scores = false;
        auto files = emit_report(*run, out, opt);
        save_checkpoint(out / "theta_star.ckpt", run->theta_star, "theta_star", cfg);
        files.push_back("theta_star.ckpt");
        print_summary(out, files);
        return 0;
    }

    score_stage(*run);
    if (command != "score") select_stage(*run);
    if (command == "run") finetune_stage(*run);
    if (command == "diagnose") opt.diagnostics = nlohmann::json{{f.kind, diagnose(*run, f.kind)}};
    opt.masks = command != "score";

    auto files = emit_report(*run, out, opt);
    save_checkpoint(out / "theta_bar.ckpt", run->warm.theta_bar, "theta_bar", cfg);
    save_optimizer_state(out / "warmup_optimizer.state", run->warm.state);
    files.push_back("theta_bar.ckpt");
    files.push_back("warmup_optimizer.state");
    if (command == "run") {
        save_checkpoint(out / "theta_star.ckpt", run->theta_star, "theta_star", cfg);
        files.push_back("theta_star.ckpt");
    }
    if (command == "diagnose") std::cout << opt.diagnostics.dump(2) << '\n';
    print_summary(out, files);
    return 0;
}

int cmd_synth(Flags& f) {
    const RunConfig cfg = f.resolve();
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
    const SyntheticData data = synth_dataset(spec);
    const ModelKind kind = cfg.model_kind();
    const fs::path out(f.out);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw ConfigError("cannot create output directory '" + out.string() + "'");
    std::vector<std::string> files = {"train.jsonl", "val.jsonl"};
    save_jsonl(out / "train.jsonl", data.split.train, kind);
    save_jsonl(out / "val.jsonl", data.split.val, kind);
    if (!data.split.anchor.empty()) {
        save_jsonl(out / "anchor.jsonl", data.split.anchor, kind);
        files.push_back("anchor.jsonl");
    }
    write_json(out / "planted.json", {{"flipped", data.flipped}});
    files.push_back("planted.json");
    write_json(out / "manifest.json", {{"tool", "dualsft"},
                                       {"version", kVersion},
                                       {"command", "synth"},
                                       {"config", cfg.to_json()},
                                       {"files", files}});
    files.push_back("manifest.json");
    print_summary(out, files);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"DualSFT: shared-surrogate parameter and data selection"};
    app.require_subcommand(1);
    Flags f;

    std::vector<std::pair<std::string, std::string>> pipeline_cmds = {
        {"run", "Warmup, dual scoring, selection and masked fine-tuning"},
        {"score", "Warmup and one-shot dual scoring"},
        {"select", "Scoring followed by signed top-k / top-b selection"},
        {"finetune", "Masked fine-tuning from theta_old on a selection (--masks masks.json)"},
    };
    std::vector<CLI::App*> subs;
    for (const auto& [name, help] : pipeline_cmds) {
        auto* sub = app.add_subcommand(name, help);
        add_config_flags(sub, f);
        if (name == "finetune") sub->add_option("--masks", f.masks, "masks.json from select or run");
        subs.push_back(sub);
    }
    auto* diag = app.add_subcommand("diagnose", "Run one diagnostic on a scored and selected run");
    add_config_flags(diag, f);
    diag->add_option("kind", f.kind, "shapley, truncation, coordination, regret, stability, diag_full, fidelity or reselect")
        ->required()
        ->check(CLI::IsMember(diagnostic_kinds()));
    auto* synth = app.add_subcommand("synth", "Write a seeded synthetic dataset as JSONL");
    add_config_flags(synth, f);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(f);
        if (diag->parsed()) return cmd_pipeline("diagnose", f);
        for (auto* sub : subs)
            if (sub->parsed()) return cmd_pipeline(sub->get_name(), f);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return 3;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
