#include "dlab/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace dlab {

namespace {

void merge_scaled(GradMap& into, const GradMap& from, float factor) {
    for (const auto& [name, g] : from) {
        auto it = into.find(name);
        if (it == into.end()) {
            into[name] = scale(g, factor);
        } else {
            DenseTensor& acc = it->second;
            for (std::int64_t i = 0; i < g.size(); ++i)
                acc[i] += factor * g[i];
        }
    }
}

// Rows of the logits matrix that predict the target span. The row before the
// first target token predicts it, and so on through the span.
std::vector<int> target_rows(const TrainExample& ex, int visual_tokens) {
    int base = static_cast<int>(ex.prompt.size()) + visual_tokens;
    std::vector<int> rows(ex.target.size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        rows[i] = base + static_cast<int>(i) - 1;
    return rows;
}

}  // namespace

LossResult task_loss(const TinyLmm& model, const TaskBatch& batch) {
    if (batch.items.empty()) throw DataError("task_loss: empty batch");
    Tape tape;
    std::vector<Value> per_example;
    int used = 0;
    for (std::size_t i = 0; i < batch.items.size(); ++i) {
        const TrainExample& ex = batch.items[i];
        if (ex.target.empty()) {
            std::cerr << "task_loss: example " << i
                      << " has an empty target span, skipping\n";
            continue;
        }
        ModelNodes nodes = build_forward(
            tape, model, SequenceInput{ex.prompt, ex.visual, ex.target});
        per_example.push_back(
            nll_rows(nodes.z, target_rows(ex, model.cfg.visual_tokens),
                     ex.target));
        ++used;
    }
    if (per_example.empty())
        throw DataError("task_loss: every example has an empty target span");

    Value total = per_example[0];
    for (std::size_t i = 1; i < per_example.size(); ++i)
        total = add(total, per_example[i]);
    Value mean = scale(total, 1.0f / static_cast<float>(used));

    LossResult res;
    res.grads = reverse_grad(tape, mean);
    // Mean recomputed in f64 from the per-example sums.
    double sum = 0.0;
    for (Value v : per_example) sum += tape.value(v).item();
    res.value = sum / used;
    res.task_term = res.value;
    if (!std::isfinite(res.value))
        throw NumericError("task_loss: loss diverged");
    return res;
}

LossResult distill_loss(const TinyLmm& student, const TinyLmm& teacher,
                        const TaskBatch& batch, const DistillConfig& cfg,
                        Rng& rng) {
    if (batch.items.empty()) throw DataError("distill_loss: empty batch");
    if (student.cfg.vocab != teacher.cfg.vocab)
        throw NumericError("distill_loss: student/teacher vocab mismatch");
    if (cfg.tau <= 0.0) throw ConfigError("distill_loss: tau must be positive");
    if (cfg.max_positions < 1)
        throw ConfigError("distill_loss: max_positions must be >= 1");

    float tau = static_cast<float>(cfg.tau);
    Tape tape;
    std::vector<Value> per_example;
    double value = 0.0;
    int total_positions = 0;
    for (const TrainExample& ex : batch.items) {
        SequenceInput seq{ex.prompt, ex.visual, ex.target};
        int seq_len = seq.text_len() + student.cfg.visual_tokens + seq.cont_len();
        int want = std::min(seq_len, cfg.max_positions);
        std::vector<int> rows = rng.sample_without_replacement(seq_len, want);
        std::sort(rows.begin(), rows.end());
        total_positions += want;

        ForwardTrace teacher_trace = forward_trace(teacher, seq);
        DenseTensor teacher_probs({want, teacher.cfg.vocab});
        for (int i = 0; i < want; ++i) {
            DenseTensor zrow({1, teacher.cfg.vocab});
            for (int c = 0; c < teacher.cfg.vocab; ++c)
                zrow.at(0, c) = teacher_trace.z.at(rows[i], c);
            DenseTensor p = softmax_rows(zrow, 1.0f / tau);
            for (int c = 0; c < teacher.cfg.vocab; ++c)
                teacher_probs.at(i, c) = p.at(0, c);
        }

        ModelNodes nodes = build_forward(tape, student, seq);
        Value kl = kl_rows(nodes.z, teacher_probs, rows, tau);
        Value weighted =
            scale(kl, tau * tau / static_cast<float>(want));
        per_example.push_back(weighted);
        value += static_cast<double>(tape.value(kl).item()) * cfg.tau *
                 cfg.tau / want;
    }

    Value total = per_example[0];
    for (std::size_t i = 1; i < per_example.size(); ++i)
        total = add(total, per_example[i]);
    Value mean =
        scale(total, 1.0f / static_cast<float>(per_example.size()));

    LossResult res;
    res.grads = reverse_grad(tape, mean);
    res.value = value / static_cast<double>(per_example.size());
    res.distill_term = res.value;
    res.distill_positions = total_positions;
    if (!std::isfinite(res.value))
        throw NumericError("distill_loss: loss diverged");
    return res;
}

LossResult combined_loss(const TinyLmm& student, const TinyLmm& teacher,
                         const TaskBatch& batch, const DistillConfig& cfg,
                         Rng& rng) {
    if (cfg.lambda == 0.0) return task_loss(student, batch);
    LossResult task = task_loss(student, batch);
    LossResult distill = distill_loss(student, teacher, batch, cfg, rng);
    LossResult res;
    res.task_term = task.value;
    res.distill_term = distill.value;
    res.value = task.value + cfg.lambda * distill.value;
    res.distill_positions = distill.distill_positions;
    res.grads = std::move(task.grads);
    merge_scaled(res.grads, distill.grads, static_cast<float>(cfg.lambda));
    return res;
}

}  // namespace dlab
