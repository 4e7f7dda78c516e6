#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dlab/rng.hpp"
#include "dlab/tape.hpp"
#include "dlab/tensor.hpp"

namespace dlab {

struct ModelConfig {
    int layers = 4;
    int d = 32;
    int heads = 4;
    int d_k = 8;
    int hidden = 64;
    int vocab = 64;
    int visual_tokens = 4;
    int d_v = 8;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Decoder-only multimodal model. All state lives in `params` under canonical
// names: perception.w, projector.w, embed.w, head.w and per block
// block{l}.{wq,wk,wv,wo,wgate,wup,wdown,ln1,ln2}. Mixture and adapter
// tensors, when present, use block{l}.moe_* and lora.<target>.{a,b}.
struct TinyLmm {
    ModelConfig cfg;
    std::map<std::string, DenseTensor> params;
    bool moe = false;
    std::vector<std::string> lora_targets;
    int lora_rank = 0;
    float lora_alpha = 0.0f;

    const DenseTensor& param(const std::string& name) const;
    DenseTensor& param(const std::string& name);
    bool has_param(const std::string& name) const;
};

std::string block_param(int layer, const std::string& field);
// The 4 + 9L model tensors, in a fixed order.
std::vector<std::string> canonical_param_names(const ModelConfig& cfg);
std::vector<int> param_shape(const ModelConfig& cfg, const std::string& name);

TinyLmm init_model(const ModelConfig& cfg, const Rng& rng);

// One forward's worth of input: prompt text, then the visual block, then any
// teacher-forced or generated continuation.
struct SequenceInput {
    std::vector<int> prompt;
    DenseTensor visual;  // visual_tokens x d_v
    std::vector<int> continuation;

    int text_len() const { return static_cast<int>(prompt.size()); }
    int cont_len() const { return static_cast<int>(continuation.size()); }
};

struct ForwardTrace {
    std::vector<DenseTensor> r;  // layers+1 entries of S x d
    std::vector<DenseTensor> a;  // layers entries
    std::vector<DenseTensor> f;  // layers entries
    DenseTensor z;               // S x V
};

struct ModelNodes {
    std::vector<Value> r, a, f;
    Value z;
};

// Records the whole forward pass on the tape; parameters become named leaves.
ModelNodes build_forward(Tape& tape, const TinyLmm& model,
                         const SequenceInput& input);

ForwardTrace forward_trace(const TinyLmm& model, const SequenceInput& input);
ForwardTrace forward_trace(const TinyLmm& model, const std::vector<int>& text,
                           const DenseTensor& visual);

// Fixed positional signal added to r^(0); not a parameter and never saved.
DenseTensor positional_encoding(int positions, int d);

// Single-block sublayer evaluations (pre-norm applied inside).
DenseTensor attention_sublayer(const TinyLmm& model, int layer,
                               const DenseTensor& x, bool causal = true);
DenseTensor mlp_sublayer(const TinyLmm& model, int layer, const DenseTensor& x);

int argmax_lowest(const float* row, int n);

// Greedy decoding after the visual block. Stops when eoa_id is produced (not
// appended) or after max_len steps. step_probs, when given, observes the
// next-token distribution of every step before it commits.
std::vector<int> greedy_decode(
    const TinyLmm& model, const std::vector<int>& prompt,
    const DenseTensor& visual, int max_len, int eoa_id,
    const std::function<void(const DenseTensor&)>& step_probs = nullptr);

}  // namespace dlab
