#pragma once

#include <map>
#include <string>

#include "dlab/param_groups.hpp"
#include "dlab/tape.hpp"

namespace dlab {

struct TrainHyper {
    double lr = 5e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double warmup_frac = 0.03;
    int total_steps = 1;
};

// Adam over the trainable names only, with linear warmup into cosine decay.
// Frozen tensors are byte-checked after every step.
class AdamOptimizer {
  public:
    AdamOptimizer(TinyLmm& model, FreezeMask mask, TrainHyper hyper);

    void step(const GradMap& grads);
    double lr_at(int step) const;  // step is 1-based
    int steps_done() const { return step_; }
    const FreezeMask& mask() const { return mask_; }

  private:
    TinyLmm* model_;
    FreezeMask mask_;
    TrainHyper hyper_;
    int step_ = 0;
    std::map<std::string, DenseTensor> m_, v_;
};

}  // namespace dlab
