#include "dlab/sequence.hpp"

#include <algorithm>
#include <numeric>

namespace dlab {

MitigationKind mitigation_from_name(const std::string& name) {
    if (name == "none") return MitigationKind::None;
    if (name == "lora") return MitigationKind::Lora;
    if (name == "wise_ft") return MitigationKind::WiseFt;
    if (name == "moe") return MitigationKind::Moe;
    if (name == "lwf") return MitigationKind::Lwf;
    throw ConfigError("unknown mitigation '" + name + "'");
}

std::string mitigation_name(MitigationKind kind) {
    switch (kind) {
        case MitigationKind::None: return "none";
        case MitigationKind::Lora: return "lora";
        case MitigationKind::WiseFt: return "wise_ft";
        case MitigationKind::Moe: return "moe";
        case MitigationKind::Lwf: return "lwf";
    }
    throw InternalError("mitigation_name: bad kind");
}

StageOutcome train_steps(
    TinyLmm& model, const TaskDataset& data,
    const std::set<std::string>& trainable, const TrainSettings& settings,
    int steps, const TinyLmm* teacher, const DistillConfig& distill,
    double lambda, Rng& data_rng, Rng& distill_rng, DataAccessLog* log,
    int stage, const std::function<void(int, const TinyLmm&)>& after_step) {
    if (data.examples.empty()) throw DataError("train_steps: empty dataset");
    if (steps < 1) throw ConfigError("train_steps: steps must be >= 1");
    if (lambda > 0.0 && teacher == nullptr)
        throw ConfigError("train_steps: distillation needs a teacher");

    TrainHyper hyper;
    hyper.lr = settings.lr;
    hyper.warmup_frac = settings.warmup_frac;
    hyper.total_steps = steps;
    AdamOptimizer opt(model, apply_freeze(model, trainable), hyper);

    int n = static_cast<int>(data.examples.size());
    int batch_size = std::min(settings.batch_size, n);
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    data_rng.shuffle(order);
    std::size_t cursor = 0;

    StageOutcome out;
    DistillConfig dcfg = distill;
    dcfg.lambda = lambda;
    for (int step = 1; step <= steps; ++step) {
        std::vector<int> picks;
        picks.reserve(static_cast<std::size_t>(batch_size));
        for (int i = 0; i < batch_size; ++i) {
            if (cursor == order.size()) {
                data_rng.shuffle(order);
                cursor = 0;
            }
            picks.push_back(order[cursor++]);
        }
        if (log) log->touches.push_back({stage, data.name});
        TaskBatch batch = to_training_batch(data, picks);

        LossResult loss;
        try {
            loss = lambda > 0.0
                       ? combined_loss(model, *teacher, batch, dcfg, distill_rng)
                       : task_loss(model, batch);
        } catch (const NumericError& e) {
            throw NumericError("stage " + std::to_string(stage) +
                               " aborted at step " + std::to_string(step) +
                               ": " + e.what());
        }
        opt.step(loss.grads);
        out.final_loss = loss.value;
        out.steps = step;
        if (after_step) after_step(step, model);
    }
    return out;
}

namespace {

std::vector<double> evaluate_row(const TinyLmm& model,
                                 const std::vector<TaskDataset>& target_evals,
                                 const std::vector<TaskDataset>& held_evals,
                                 int threads) {
    std::vector<double> row;
    row.reserve(target_evals.size() + 1);
    for (const TaskDataset& ds : target_evals)
        row.push_back(evaluate(model, ds, threads));
    double held = 0.0;
    for (const TaskDataset& ds : held_evals)
        held += evaluate(model, ds, threads);
    row.push_back(held / static_cast<double>(held_evals.size()));
    return row;
}

}  // namespace

SequenceOutcome run_sequence(const TinyLmm& base,
                             const std::vector<SyntheticTaskSpec>& stages,
                             const std::vector<SyntheticTaskSpec>& held_out,
                             const ParamGroupSpec& group,
                             const MitigationSpec& mitigation,
                             const TrainSettings& settings, const Rng& rng,
                             int eval_threads) {
    if (stages.empty()) throw ConfigError("run_sequence: no stages");
    if (held_out.empty()) throw ConfigError("run_sequence: no held-out task");
    for (std::size_t i = 0; i < stages.size(); ++i)
        for (std::size_t j = i + 1; j < stages.size(); ++j)
            if (stages[i].kind == stages[j].kind &&
                stages[i].seed == stages[j].seed)
                throw ConfigError("run_sequence: task repeats in the sequence");

    const ModelConfig& cfg = base.cfg;
    std::vector<TaskData> stage_data;
    std::vector<TaskDataset> target_evals;
    for (const SyntheticTaskSpec& spec : stages) {
        stage_data.push_back(generate_task(spec, cfg.visual_tokens, cfg.d_v));
        target_evals.push_back(stage_data.back().eval);
    }
    std::vector<TaskDataset> held_evals;
    for (const SyntheticTaskSpec& spec : held_out)
        held_evals.push_back(
            generate_task(spec, cfg.visual_tokens, cfg.d_v).eval);

    SequenceOutcome out;
    out.matrix.columns.reserve(stages.size() + 1);
    for (const SyntheticTaskSpec& spec : stages)
        out.matrix.columns.push_back(spec.name.empty()
                                         ? task_kind_name(spec.kind)
                                         : spec.name);
    out.matrix.columns.push_back("held_out");

    TinyLmm model = base;
    if (mitigation.kind == MitigationKind::Moe) moe_wrap(model);

    out.matrix.rows.push_back(
        evaluate_row(model, target_evals, held_evals, eval_threads));
    out.checkpoints.push_back(model);

    for (std::size_t k = 0; k < stages.size(); ++k) {
        int stage = static_cast<int>(k) + 1;
        Rng stage_rng = rng.substream("stage" + std::to_string(stage));
        Rng data_rng = stage_rng.substream("data");
        Rng distill_rng = stage_rng.substream("distill");

        const TaskDataset& train_data = stage_data[k].train;
        int steps = (static_cast<int>(train_data.examples.size()) +
                     settings.batch_size - 1) /
                    settings.batch_size;

        TinyLmm before_stage = model;
        std::set<std::string> trainable;
        double lambda = 0.0;
        const TinyLmm* teacher = nullptr;

        switch (mitigation.kind) {
            case MitigationKind::None:
            case MitigationKind::WiseFt:
                trainable = resolve_group(group, model);
                break;
            case MitigationKind::Lwf:
                trainable = resolve_group(group, model);
                lambda = mitigation.lwf.lambda;
                teacher = &before_stage;
                break;
            case MitigationKind::Lora: {
                lora_attach(model, lora_default_targets(cfg),
                            mitigation.lora_rank, mitigation.lora_alpha,
                            stage_rng.substream("init"));
                for (const std::string& n : lora_param_names(model))
                    trainable.insert(n);
                break;
            }
            case MitigationKind::Moe: {
                for (const std::string& n : moe_param_names(model))
                    trainable.insert(n);
                break;
            }
        }

        train_steps(model, train_data, trainable, settings, steps, teacher,
                    mitigation.lwf, lambda, data_rng, distill_rng, &out.log,
                    stage);

        if (mitigation.kind == MitigationKind::Lora) lora_merge(model);

        const TinyLmm* eval_model = &model;
        TinyLmm interpolated;
        if (mitigation.kind == MitigationKind::WiseFt) {
            interpolated =
                wise_ft_interpolate(before_stage, model, mitigation.wise_ft_beta);
            eval_model = &interpolated;
        }
        out.matrix.rows.push_back(
            evaluate_row(*eval_model, target_evals, held_evals, eval_threads));
        out.checkpoints.push_back(model);

        // Rehearsal-free assertion: stage k touched stage k's dataset only.
        for (const DataAccessLog::Touch& touch : out.log.touches)
            if (touch.stage == stage && touch.dataset != train_data.name)
                throw InternalError("stage " + std::to_string(stage) +
                                    " touched foreign dataset " + touch.dataset);
    }

    out.metrics = compute_metrics(out.matrix);
    return out;
}

TinyLmm make_pretrained_base(const ModelConfig& cfg, const Rng& rng,
                             int steps, const TrainSettings& settings,
                             int train_n) {
    TinyLmm model = init_model(cfg, rng.substream("init"));
    if (steps < 1) return model;
    SyntheticTaskSpec spec = held_out_spec(rng.substream("task/caption").key(),
                                           train_n, /*eval_n=*/64);
    TaskData data = generate_task(spec, cfg.visual_tokens, cfg.d_v);
    Rng data_rng = rng.substream("pretrain/data");
    Rng distill_rng = rng.substream("pretrain/distill");
    std::set<std::string> all;
    for (const std::string& n : canonical_param_names(cfg)) all.insert(n);
    train_steps(model, data.train, all, settings, steps, nullptr, {}, 0.0,
                data_rng, distill_rng, nullptr, 0);
    return model;
}

std::vector<SyntheticTaskSpec> curriculum_stages(const std::string& order,
                                                 std::uint64_t seed,
                                                 int train_n, int eval_n) {
    std::vector<std::string> names;
    if (order == "default") {
        names = {"classify", "count", "classify2", "copy", "clock"};
    } else if (order == "alt1") {
        names = {"classify2", "classify", "copy", "clock", "count"};
    } else if (order == "alt2") {
        names = {"clock", "copy", "classify2", "count", "classify"};
    } else {
        throw ConfigError("unknown curriculum order '" + order + "'");
    }
    std::vector<SyntheticTaskSpec> specs;
    Rng root(seed);
    for (const std::string& name : names) {
        SyntheticTaskSpec spec;
        std::string kind_name = name == "classify2" ? "classify" : name;
        spec.kind = task_kind_from_name(kind_name);
        spec.seed = root.substream("task/" + name).key();
        spec.train_n = train_n;
        spec.eval_n = eval_n;
        spec.name = name;
        specs.push_back(spec);
    }
    return specs;
}

SyntheticTaskSpec held_out_spec(std::uint64_t seed, int train_n, int eval_n) {
    SyntheticTaskSpec spec;
    spec.kind = TaskKind::CaptionHeldOut;
    spec.seed = seed;
    spec.train_n = train_n;
    spec.eval_n = eval_n;
    spec.name = "caption";
    return spec;
}

}  // namespace dlab
