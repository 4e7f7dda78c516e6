#pragma once

#include <vector>

#include "dlab/model.hpp"
#include "dlab/rng.hpp"
#include "dlab/tape.hpp"

namespace dlab {

// One teacher-forced training item. `target` is the loss span: the tokens the
// model must produce after the visual block, terminator included when the
// dataset adds one.
struct TrainExample {
    DenseTensor visual;
    std::vector<int> prompt;
    std::vector<int> target;
};

struct TaskBatch {
    std::vector<TrainExample> items;
};

struct DistillConfig {
    double lambda = 1.0;
    double tau = 2.0;
    int max_positions = 1000;
};

struct LossResult {
    double value = 0.0;
    double task_term = 0.0;
    double distill_term = 0.0;
    GradMap grads;
    int distill_positions = 0;  // sampled positions across the batch
};

// Mean over examples of the summed next-token cross-entropy across the
// target span. Examples with an empty span are skipped with a warning; an
// all-empty batch is an input error.
LossResult task_loss(const TinyLmm& model, const TaskBatch& batch);

// Temperature-scaled KL from the teacher's distribution to the student's,
// averaged over positions sampled uniformly without replacement from each
// example's full sequence (prompt, visual, and target rows alike), scaled by
// tau^2, then averaged over the batch. Gradients flow to the student only.
LossResult distill_loss(const TinyLmm& student, const TinyLmm& teacher,
                        const TaskBatch& batch, const DistillConfig& cfg,
                        Rng& rng);

// task + lambda * distill. With lambda == 0 this is task_loss verbatim and
// the RNG is left untouched.
LossResult combined_loss(const TinyLmm& student, const TinyLmm& teacher,
                         const TaskBatch& batch, const DistillConfig& cfg,
                         Rng& rng);

}  // namespace dlab
