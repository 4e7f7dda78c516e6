#pragma once

#include <string>
#include <vector>

#include "dlab/model.hpp"
#include "dlab/rng.hpp"

namespace dlab {

// Attaches rank-r adapters to the given weight names. B starts at zero and A
// uniform in (-1/sqrt(k), 1/sqrt(k)) for a d x k target, so the wrapped model
// matches the base exactly until training moves B. Tensors are stored as
// lora.<target>.a and lora.<target>.b.
void lora_attach(TinyLmm& model, const std::vector<std::string>& targets,
                 int rank, float alpha, const Rng& rng);

// Default wrap set: every MLP-path weight.
std::vector<std::string> lora_default_targets(const ModelConfig& cfg);

// Folds (alpha/rank) * B * A into each wrapped weight and removes the
// adapters. Decoding is unchanged within float tolerance.
void lora_merge(TinyLmm& model);

std::vector<std::string> lora_param_names(const TinyLmm& model);
std::int64_t lora_trainable_count(const TinyLmm& model);

// (1 - beta) * base + beta * tuned for every parameter. Endpoints are
// bit-exact copies.
TinyLmm wise_ft_interpolate(const TinyLmm& base, const TinyLmm& tuned,
                            double beta);

// Duplicates each block's MLP into a frozen expert (the original tensors) and
// a trainable copy (block{l}.moe_w*), plus a zero d x 2 router
// (block{l}.moe_gate). Routing is dense softmax, so the wrapped model equals
// the original at initialization.
void moe_wrap(TinyLmm& model);

std::vector<std::string> moe_param_names(const TinyLmm& model);

}  // namespace dlab
