#pragma once

#include <vector>

#include "dlab/model.hpp"
#include "dlab/objectives.hpp"

namespace dlab {

// Fixed set of prompts for drift probing; sampled once and reused across
// checkpoints so the like-for-like comparison holds.
struct ProbeBatch {
    struct Item {
        std::vector<int> prompt;
        DenseTensor visual;
    };
    std::vector<Item> items;
    int max_len = 6;
    int eoa_id = 1;
};

struct NtbResult {
    double value = 0.0;
    int contributing = 0;
    int skipped = 0;  // zero-step generations, excluded from the mean
};

// Greedy-decodes each item; at every step the next-token distribution is read
// before the step commits and the mass max over numeric_tokens recorded.
// Steps average per item, items average over the batch.
NtbResult ntb(const TinyLmm& model, const ProbeBatch& batch,
              const std::vector<int>& numeric_tokens);

struct AttributionReport {
    std::vector<double> sa;   // per layer, sqrt(mean_j ||U^T delta a||^2)
    std::vector<double> mlp;  // per layer, same for the MLP pathway
    // max over scored positions of || sum_l (delta a + delta f) U - delta z ||_inf
    double completeness_gap = 0.0;
    int positions = 0;
};

// Teacher-forced comparison of two models that share embeddings and head.
// Scores the rows that predict each example's target span.
AttributionReport layer_attribution(const TinyLmm& base, const TinyLmm& tuned,
                                    const TaskBatch& batch);

}  // namespace dlab
