#pragma once

#include <functional>

#include "dlab/objectives.hpp"
#include "dlab/tasks.hpp"

namespace dlab {

using DecodeFn = std::function<std::vector<int>(const Example&)>;

// Percent of examples whose decoded answer matches the reference exactly.
// Empty decodes count as incorrect unless the reference is empty too.
double exact_match_accuracy(const DecodeFn& decode, const TaskDataset& dataset);

// Greedy-decodes each example (terminator stripped) and scores exact match.
// Examples are independent, so they may be scored on several threads; the
// reduction always runs in index order.
double evaluate(const TinyLmm& model, const TaskDataset& dataset,
                int threads = 1);

// Teacher-forced batch for training: target = answer + end-of-answer token.
TaskBatch to_training_batch(const TaskDataset& dataset,
                            const std::vector<int>& indices);

}  // namespace dlab
