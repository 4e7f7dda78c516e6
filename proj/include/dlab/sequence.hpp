#pragma once

#include <functional>
#include <set>

#include "dlab/eval.hpp"
#include "dlab/metrics.hpp"
#include "dlab/mitigation.hpp"
#include "dlab/optimizer.hpp"
#include "dlab/param_groups.hpp"

namespace dlab {

enum class MitigationKind { None, Lora, WiseFt, Moe, Lwf };

MitigationKind mitigation_from_name(const std::string& name);
std::string mitigation_name(MitigationKind kind);

struct MitigationSpec {
    MitigationKind kind = MitigationKind::None;
    int lora_rank = 4;
    float lora_alpha = 8.0f;
    double wise_ft_beta = 0.3;
    DistillConfig lwf;
};

struct TrainSettings {
    double lr = 5e-3;
    int batch_size = 8;
    double warmup_frac = 0.03;
};

// Every dataset touch a training loop makes, for the rehearsal-free check.
struct DataAccessLog {
    struct Touch {
        int stage;
        std::string dataset;
    };
    std::vector<Touch> touches;
};

struct StageOutcome {
    double final_loss = 0.0;
    int steps = 0;
};

// Runs `steps` optimizer updates over `data`, reshuffling each epoch. When
// lambda > 0 a teacher must be supplied and the combined objective is used.
// after_step, when set, observes the model after every update.
StageOutcome train_steps(
    TinyLmm& model, const TaskDataset& data,
    const std::set<std::string>& trainable, const TrainSettings& settings,
    int steps, const TinyLmm* teacher, const DistillConfig& distill,
    double lambda, Rng& data_rng, Rng& distill_rng, DataAccessLog* log,
    int stage,
    const std::function<void(int, const TinyLmm&)>& after_step = nullptr);

struct SequenceOutcome {
    AccuracyMatrix matrix;
    SequenceMetrics metrics;
    std::vector<TinyLmm> checkpoints;  // baseline, then one per stage
    DataAccessLog log;
};

// One epoch per stage, no rehearsal, stage k's LwF teacher is the stage k-1
// state. WiSE-FT evaluates the interpolated weights but trains onward from
// the tuned ones; LoRA re-attaches fresh adapters per stage and merges after;
// MoE wraps once up front and trains only the new expert and gate.
SequenceOutcome run_sequence(const TinyLmm& base,
                             const std::vector<SyntheticTaskSpec>& stages,
                             const std::vector<SyntheticTaskSpec>& held_out,
                             const ParamGroupSpec& group,
                             const MitigationSpec& mitigation,
                             const TrainSettings& settings, const Rng& rng,
                             int eval_threads = 1);

// Fresh model trained on the held-out caption task with everything trainable;
// the continual stages start from this state.
TinyLmm make_pretrained_base(const ModelConfig& cfg, const Rng& rng,
                             int steps, const TrainSettings& settings,
                             int train_n);

// Curriculum orders shipped with the lab. Task seeds derive from the run
// seed and the task name, so classify and classify2 share a kind but not data.
std::vector<SyntheticTaskSpec> curriculum_stages(const std::string& order,
                                                 std::uint64_t seed,
                                                 int train_n, int eval_n);
SyntheticTaskSpec held_out_spec(std::uint64_t seed, int train_n, int eval_n);

}  // namespace dlab
