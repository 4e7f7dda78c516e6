#pragma once

#include <map>
#include <string>

#include "dlab/errors.hpp"
#include "dlab/model.hpp"
#include "dlab/tensor.hpp"

namespace dlab {

// Binary tensor container: magic "DLAB", u32 version (1), u32 tensor count,
// then per tensor {u16 name length, name bytes, u8 dtype (0 = f32), u8 rank,
// u32 dims, little-endian f32 payload}. Tensors are written in lexicographic
// name order so identical models produce identical bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_tensors(const std::map<std::string, DenseTensor>& tensors,
                  const std::string& path);
std::map<std::string, DenseTensor> load_tensors(const std::string& path);

void save_checkpoint(const TinyLmm& model, const std::string& path);

// Rebuilds a model from a tensor file. Canonical tensors must all be present
// with the shapes implied by cfg; moe_* and lora.* tensors restore the
// corresponding wrapper state. LoRA alpha is not stored in the file, so it is
// supplied by the caller.
TinyLmm load_checkpoint(const std::string& path, const ModelConfig& cfg,
                        float lora_alpha = 8.0f);

}  // namespace dlab
