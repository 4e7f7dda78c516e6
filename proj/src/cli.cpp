#include "dlab/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <set>

#include <CLI11.hpp>
#include <json.hpp>

#include "dlab/checkpoint.hpp"
#include "dlab/config.hpp"
#include "dlab/probes.hpp"
#include "dlab/report.hpp"
#include "dlab/sequence.hpp"

namespace dlab {

namespace {

using Json = nlohmann::ordered_json;

std::string fmt_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string joined_group_names() {
    std::string out;
    for (const std::string& name : group_names()) {
        if (!out.empty()) out += ", ";
        out += name;
    }
    return out;
}

struct CommonFlags {
    std::string config_path;
    std::string group;
    std::string task;
    std::string out;
    std::string mitigation;
    std::string order;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int steps = 0;
    int threads = 0;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
    cmd->add_option("--config", f.config_path, "JSON config file")
        ->check(CLI::ExistingFile);
    cmd->add_option("--group", f.group,
                    "parameter group: " + joined_group_names())
        ->check(CLI::IsMember(group_names()));
    cmd->add_option("--task", f.task, "target task")
        ->check(CLI::IsMember(
            {"count", "classify", "clock", "copy", "caption"}));
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_option("--seed", f.seed, "RNG seed (beats config and DLAB_SEED)")
        ->each([&f](const std::string&) { f.seed_set = true; });
    cmd->add_option("--steps", f.steps, "tuning steps")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--threads", f.threads, "evaluation threads")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--mitigation", f.mitigation, "forgetting mitigation")
        ->check(CLI::IsMember({"none", "lora", "wise_ft", "moe", "lwf"}));
    cmd->add_option("--order", f.order, "curriculum order")
        ->check(CLI::IsMember({"default", "alt1", "alt2"}));
}

ExperimentConfig resolve_config(const CommonFlags& f) {
    ExperimentConfig cfg = f.config_path.empty()
                               ? config_from_json_text("{}")
                               : load_config(f.config_path);
    if (f.seed_set) cfg.seed = f.seed;
    if (!f.group.empty()) cfg.group = f.group;
    if (!f.task.empty()) cfg.task = f.task;
    if (!f.out.empty()) cfg.output_dir = f.out;
    if (!f.mitigation.empty())
        cfg.mitigation.kind = mitigation_from_name(f.mitigation);
    if (!f.order.empty()) cfg.curriculum.order = f.order;
    if (f.steps > 0) cfg.train_steps = f.steps;
    if (f.threads > 0) cfg.threads = f.threads;
    cfg.validate();
    return cfg;
}

SyntheticTaskSpec single_task_spec(const ExperimentConfig& cfg) {
    SyntheticTaskSpec spec;
    spec.kind = task_kind_from_name(cfg.task);
    spec.seed = Rng(cfg.seed).substream("task/" + cfg.task).key();
    spec.train_n = cfg.curriculum.train_n;
    spec.eval_n = cfg.curriculum.eval_n;
    spec.name = cfg.task;
    return spec;
}

struct TuneSetup {
    std::set<std::string> trainable;
    double lambda = 0.0;
    bool use_teacher = false;
};

// Mirrors the per-stage wiring of run_sequence for single-task commands.
TuneSetup prepare_tuning(TinyLmm& model, const ExperimentConfig& cfg,
                         Rng& stage_rng) {
    TuneSetup setup;
    switch (cfg.mitigation.kind) {
        case MitigationKind::None:
        case MitigationKind::WiseFt:
            setup.trainable = resolve_group(ParamGroupSpec::parse(cfg.group),
                                            model);
            break;
        case MitigationKind::Lwf:
            setup.trainable = resolve_group(ParamGroupSpec::parse(cfg.group),
                                            model);
            setup.lambda = cfg.mitigation.lwf.lambda;
            setup.use_teacher = true;
            break;
        case MitigationKind::Lora:
            lora_attach(model, lora_default_targets(model.cfg),
                        cfg.mitigation.lora_rank, cfg.mitigation.lora_alpha,
                        stage_rng.substream("init"));
            for (const std::string& n : lora_param_names(model))
                setup.trainable.insert(n);
            break;
        case MitigationKind::Moe:
            moe_wrap(model);
            for (const std::string& n : moe_param_names(model))
                setup.trainable.insert(n);
            break;
    }
    return setup;
}

int cmd_train(const CommonFlags& flags) {
    ExperimentConfig cfg = resolve_config(flags);
    write_manifest(cfg.output_dir, cfg);

    Rng root(cfg.seed);
    TinyLmm base = make_pretrained_base(cfg.model, root, cfg.pretrain_steps,
                                        cfg.train, cfg.curriculum.train_n);
    TaskData data = generate_task(single_task_spec(cfg),
                                  cfg.model.visual_tokens, cfg.model.d_v);
    save_checkpoint(base, cfg.output_dir + "/ckpt_base.dlab");
    double acc_base = evaluate(base, data.eval, cfg.threads);

    TinyLmm model = base;
    Rng stage_rng = root.substream("train");
    TuneSetup setup = prepare_tuning(model, cfg, stage_rng);
    Rng data_rng = stage_rng.substream("data");
    Rng distill_rng = stage_rng.substream("distill");
    StageOutcome outcome = train_steps(
        model, data.train, setup.trainable, cfg.train, cfg.train_steps,
        setup.use_teacher ? &base : nullptr, cfg.mitigation.lwf, setup.lambda,
        data_rng, distill_rng, nullptr, 1);
    if (cfg.mitigation.kind == MitigationKind::Lora) {
        save_checkpoint(model, cfg.output_dir + "/ckpt_adapters.dlab");
        lora_merge(model);
    }
    if (cfg.mitigation.kind == MitigationKind::WiseFt)
        model = wise_ft_interpolate(base, model, cfg.mitigation.wise_ft_beta);

    save_checkpoint(model, cfg.output_dir + "/ckpt_final.dlab");
    double acc_final = evaluate(model, data.eval, cfg.threads);
    write_manifest(cfg.output_dir, cfg,
                   {{"train.steps", std::to_string(outcome.steps)},
                    {"train.final_loss", fmt_g(outcome.final_loss)},
                    {"train.accuracy_base", fmt_g(acc_base)},
                    {"train.accuracy_final", fmt_g(acc_final)},
                    {"rng.root", std::to_string(cfg.seed)}});
    std::cout << "task " << cfg.task << ": accuracy " << fmt_g(acc_base)
              << " -> " << fmt_g(acc_final) << " after " << outcome.steps
              << " steps\n";
    return 0;
}

int cmd_sequence(const CommonFlags& flags) {
    ExperimentConfig cfg = resolve_config(flags);
    write_manifest(cfg.output_dir, cfg);

    Rng root(cfg.seed);
    TinyLmm base = make_pretrained_base(cfg.model, root, cfg.pretrain_steps,
                                        cfg.train, cfg.curriculum.train_n);
    std::vector<SyntheticTaskSpec> stages =
        curriculum_stages(cfg.curriculum.order, cfg.seed,
                          cfg.curriculum.train_n, cfg.curriculum.eval_n);
    std::vector<SyntheticTaskSpec> held = {
        held_out_spec(Rng(cfg.seed).substream("task/caption").key(),
                      cfg.curriculum.train_n, cfg.curriculum.eval_n)};

    SequenceOutcome outcome = run_sequence(
        base, stages, held, ParamGroupSpec::parse(cfg.group), cfg.mitigation,
        cfg.train, root.substream("sequence"), cfg.threads);

    CsvTable matrix;
    matrix.header = {"stage", "task", "accuracy"};
    for (std::size_t k = 0; k < outcome.matrix.rows.size(); ++k)
        for (std::size_t j = 0; j < outcome.matrix.columns.size(); ++j)
            matrix.rows.push_back({std::to_string(k),
                                   outcome.matrix.columns[j],
                                   fmt_g(outcome.matrix.rows[k][j])});
    write_csv(cfg.output_dir + "/matrix.csv", matrix);

    Json metrics;
    metrics["target_learning"] = outcome.metrics.target_learning;
    metrics["target_forgetting"] = outcome.metrics.target_forgetting;
    metrics["target_overall"] = outcome.metrics.target_overall;
    metrics["held_out_forgetting"] = outcome.metrics.held_out_forgetting;
    std::ofstream mf(cfg.output_dir + "/metrics.json", std::ios::trunc);
    if (!mf)
        throw FormatError("cannot write " + cfg.output_dir + "/metrics.json");
    mf << metrics.dump(2) << "\n";
    mf.close();

    std::vector<std::pair<std::string, std::string>> run_state;
    for (std::size_t k = 0; k < outcome.checkpoints.size(); ++k)
        save_checkpoint(outcome.checkpoints[k],
                        cfg.output_dir + "/ckpt_stage" + std::to_string(k) +
                            ".dlab");
    for (std::size_t k = 1; k < outcome.checkpoints.size(); ++k) {
        int batches = 0;
        for (const DataAccessLog::Touch& t : outcome.log.touches)
            if (t.stage == static_cast<int>(k)) ++batches;
        run_state.push_back({"stage" + std::to_string(k) + ".batches",
                             std::to_string(batches)});
    }
    write_manifest(cfg.output_dir, cfg, run_state);

    std::cout << "sequence (" << cfg.curriculum.order << ", group "
              << cfg.group << ", mitigation "
              << mitigation_name(cfg.mitigation.kind) << ")\n"
              << "  target_learning    " << fmt_g(outcome.metrics.target_learning)
              << "\n  target_forgetting  "
              << fmt_g(outcome.metrics.target_forgetting)
              << "\n  target_overall     " << fmt_g(outcome.metrics.target_overall)
              << "\n  held_out_forgetting "
              << fmt_g(outcome.metrics.held_out_forgetting) << "\n";
    return 0;
}

struct ProbeRun {
    TinyLmm base;
    TaskData data;
    std::vector<int> grid;
    ExperimentConfig cfg;
    Rng stage_rng;
    TinyLmm model;
    TuneSetup setup;
};

// Shared setup so `probe` and `attribute` walk the same tuning trajectory.
ProbeRun start_probe_run(const CommonFlags& flags) {
    ExperimentConfig cfg = resolve_config(flags);
    int max_grid = *std::max_element(cfg.probe.grid.begin(),
                                     cfg.probe.grid.end());
    if (max_grid > cfg.probe.train_steps)
        throw ConfigError("probe.grid exceeds probe.train_steps");
    write_manifest(cfg.output_dir, cfg);

    Rng root(cfg.seed);
    ProbeRun run{make_pretrained_base(cfg.model, root, cfg.pretrain_steps,
                                      cfg.train, cfg.curriculum.train_n),
                 generate_task(single_task_spec(cfg), cfg.model.visual_tokens,
                               cfg.model.d_v),
                 cfg.probe.grid,
                 cfg,
                 root.substream("probe"),
                 TinyLmm{},
                 TuneSetup{}};
    std::sort(run.grid.begin(), run.grid.end());
    run.grid.erase(std::unique(run.grid.begin(), run.grid.end()),
                   run.grid.end());
    run.model = run.base;
    run.setup = prepare_tuning(run.model, cfg, run.stage_rng);
    return run;
}

void run_probe_training(ProbeRun& run,
                        const std::function<void(int, const TinyLmm&)>& hook) {
    Rng data_rng = run.stage_rng.substream("data");
    Rng distill_rng = run.stage_rng.substream("distill");
    std::set<int> grid_set(run.grid.begin(), run.grid.end());
    train_steps(run.model, run.data.train, run.setup.trainable, run.cfg.train,
                run.cfg.probe.train_steps,
                run.setup.use_teacher ? &run.base : nullptr,
                run.cfg.mitigation.lwf, run.setup.lambda, data_rng,
                distill_rng, nullptr, 1,
                [&](int step, const TinyLmm& m) {
                    if (grid_set.count(step)) hook(step, m);
                });
}

int cmd_probe(const CommonFlags& flags) {
    ProbeRun run = start_probe_run(flags);
    const ExperimentConfig& cfg = run.cfg;

    ProbeBatch batch;
    batch.max_len = cfg.probe.max_len;
    int n = std::min<int>(cfg.probe.batch_size,
                          static_cast<int>(run.data.eval.examples.size()));
    for (int i = 0; i < n; ++i) {
        const Example& ex = run.data.eval.examples[i];
        batch.items.push_back({ex.prompt, ex.visual});
    }

    CsvTable probe;
    probe.header = {"checkpoint_step", "ntb"};
    save_checkpoint(run.base, cfg.output_dir + "/ckpt_step0.dlab");
    probe.rows.push_back(
        {"0", fmt_g(ntb(run.base, batch, numeric_token_set()).value)});

    run_probe_training(run, [&](int step, const TinyLmm& m) {
        save_checkpoint(m, cfg.output_dir + "/ckpt_step" +
                               std::to_string(step) + ".dlab");
        probe.rows.push_back(
            {std::to_string(step), fmt_g(ntb(m, batch, numeric_token_set()).value)});
    });
    write_csv(cfg.output_dir + "/probe.csv", probe);
    write_manifest(cfg.output_dir, cfg,
                   {{"probe.items", std::to_string(n)},
                    {"probe.steps", std::to_string(cfg.probe.train_steps)}});
    std::cout << "probe: " << probe.rows.size() << " checkpoints on task "
              << cfg.task << "\n";
    return 0;
}

int cmd_attribute(const CommonFlags& flags) {
    ProbeRun run = start_probe_run(flags);
    const ExperimentConfig& cfg = run.cfg;

    int n = std::min<int>(cfg.attribution_examples,
                          static_cast<int>(run.data.eval.examples.size()));
    std::vector<int> indices(static_cast<std::size_t>(n));
    std::iota(indices.begin(), indices.end(), 0);
    TaskBatch batch = to_training_batch(run.data.eval, indices);

    CsvTable table;
    table.header = {"checkpoint_step", "layer", "pathway", "value"};
    auto append = [&](int step, const AttributionReport& report) {
        for (std::size_t l = 0; l < report.sa.size(); ++l) {
            table.rows.push_back({std::to_string(step), std::to_string(l),
                                  "sa", fmt_g(report.sa[l])});
            table.rows.push_back({std::to_string(step), std::to_string(l),
                                  "mlp", fmt_g(report.mlp[l])});
        }
    };
    append(0, layer_attribution(run.base, run.base, batch));
    run_probe_training(run, [&](int step, const TinyLmm& m) {
        append(step, layer_attribution(run.base, m, batch));
    });
    write_csv(cfg.output_dir + "/attribution.csv", table);
    write_manifest(cfg.output_dir, cfg,
                   {{"attribution.examples", std::to_string(n)}});
    std::cout << "attribution: " << table.rows.size() << " rows on task "
              << cfg.task << "\n";
    return 0;
}

int cmd_interpolate(const CommonFlags& flags, const std::string& base_path,
                    const std::string& tuned_path, const std::string& betas) {
    ExperimentConfig cfg = resolve_config(flags);
    std::vector<double> beta_list;
    std::string cur;
    for (char c : betas + ",") {
        if (c != ',') {
            cur.push_back(c);
            continue;
        }
        if (cur.empty()) continue;
        char* end = nullptr;
        double b = std::strtod(cur.c_str(), &end);
        if (end == cur.c_str() || *end != '\0' || b < 0.0 || b > 1.0)
            throw ConfigError("bad beta '" + cur + "' (want values in [0,1])");
        beta_list.push_back(b);
        cur.clear();
    }
    if (beta_list.empty()) throw ConfigError("no betas given");

    write_manifest(cfg.output_dir, cfg);
    TinyLmm base = load_checkpoint(base_path, cfg.model,
                                   cfg.mitigation.lora_alpha);
    TinyLmm tuned = load_checkpoint(tuned_path, cfg.model,
                                    cfg.mitigation.lora_alpha);
    TaskData data = generate_task(single_task_spec(cfg),
                                  cfg.model.visual_tokens, cfg.model.d_v);

    CsvTable table;
    table.header = {"beta", "task", "accuracy"};
    for (double beta : beta_list) {
        TinyLmm mixed = wise_ft_interpolate(base, tuned, beta);
        table.rows.push_back({fmt_g(beta), cfg.task,
                              fmt_g(evaluate(mixed, data.eval, cfg.threads))});
    }
    write_csv(cfg.output_dir + "/interpolation.csv", table);
    std::cout << "interpolate: " << beta_list.size() << " points on task "
              << cfg.task << "\n";
    return 0;
}

int cmd_merge_lora(const CommonFlags& flags, const std::string& in_path,
                   const std::string& out_path) {
    ExperimentConfig cfg = resolve_config(flags);
    TinyLmm model = load_checkpoint(in_path, cfg.model,
                                    cfg.mitigation.lora_alpha);
    if (model.lora_targets.empty())
        throw ConfigError("checkpoint " + in_path + " carries no adapters");
    lora_merge(model);
    save_checkpoint(model, out_path);
    std::cout << "merged adapters into " << out_path << "\n";
    return 0;
}

int cmd_report(const CommonFlags& flags) {
    ExperimentConfig cfg = resolve_config(flags);
    emit_report(cfg.output_dir);
    std::cout << "report: wrote heldout_vs_stage.svg, ntb_vs_step.svg, "
                 "attribution_layers.svg in "
              << cfg.output_dir << "\n";
    return 0;
}

}  // namespace

int run_command(int argc, const char* const* argv) {
    CLI::App app{"dlab: a desk-scale continual-learning laboratory"};
    app.require_subcommand(1);

    CommonFlags flags;
    std::string base_path, tuned_path, in_path, out_path;
    std::string betas = "0.1,0.3,0.5,0.7,0.9";

    CLI::App* train = app.add_subcommand(
        "train", "tune one task with the chosen group and mitigation");
    add_common(train, flags);
    CLI::App* sequence = app.add_subcommand(
        "sequence", "run the staged curriculum and write matrix + metrics");
    add_common(sequence, flags);
    CLI::App* probe = app.add_subcommand(
        "probe", "numeric-token bias across the checkpoint grid");
    add_common(probe, flags);
    CLI::App* attribute = app.add_subcommand(
        "attribute", "per-layer logit attribution across the checkpoint grid");
    add_common(attribute, flags);
    CLI::App* interpolate = app.add_subcommand(
        "interpolate", "evaluate base/tuned weight mixes over a beta list");
    add_common(interpolate, flags);
    interpolate->add_option("--base", base_path, "base checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    interpolate->add_option("--tuned", tuned_path, "tuned checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    interpolate->add_option("--betas", betas, "comma-separated mixing weights");
    CLI::App* merge = app.add_subcommand(
        "merge-lora", "fold adapters into the backbone weights");
    add_common(merge, flags);
    merge->add_option("--input", in_path, "checkpoint with adapters")
        ->required()
        ->check(CLI::ExistingFile);
    merge->add_option("--output", out_path, "merged checkpoint path")
        ->required();
    CLI::App* report = app.add_subcommand(
        "report", "render SVG plots from a run directory's CSV files");
    add_common(report, flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        if (code == 0) return 0;
        std::cerr << "parameter groups: " << joined_group_names() << "\n";
        return 2;
    }

    try {
        if (train->parsed()) return cmd_train(flags);
        if (sequence->parsed()) return cmd_sequence(flags);
        if (probe->parsed()) return cmd_probe(flags);
        if (attribute->parsed()) return cmd_attribute(flags);
        if (interpolate->parsed())
            return cmd_interpolate(flags, base_path, tuned_path, betas);
        if (merge->parsed()) return cmd_merge_lora(flags, in_path, out_path);
        if (report->parsed()) return cmd_report(flags);
        throw InternalError("no subcommand dispatched");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n"
                  << "parameter groups: " << joined_group_names() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace dlab
