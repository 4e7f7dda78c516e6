#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dlab/model.hpp"

namespace dlab {

enum class Group {
    Full,
    VisionEncoder,
    Projector,
    VisionAndProjector,
    Llm,
    SAProj,
    SAProjQKV,
    Mlp,
    MlpGateUp,
    Composite,
};

struct ParamGroupSpec {
    Group kind = Group::Full;
    std::vector<ParamGroupSpec> members;  // used when kind == Composite

    static ParamGroupSpec single(Group g);
    static ParamGroupSpec composite(std::vector<Group> groups);
    // Accepts the nine canonical names, or '+'-joined members for composites.
    static ParamGroupSpec parse(const std::string& text);
};

const std::vector<std::string>& group_names();
std::string group_name(Group g);

// Canonical tensor names selected for tuning. LLM-internal groups never
// include embeddings, head, or layer norms.
std::set<std::string> resolve_group(const ParamGroupSpec& spec,
                                    const TinyLmm& model);

// Trainable-name set plus byte snapshots of everything else; the optimizer
// asserts the snapshot after each step.
struct FreezeMask {
    std::set<std::string> trainable;
    std::map<std::string, std::vector<std::uint8_t>> frozen_bytes;
};

FreezeMask apply_freeze(const TinyLmm& model,
                        const std::set<std::string>& trainable);
void assert_frozen_intact(const TinyLmm& model, const FreezeMask& mask);

std::int64_t trainable_scalar_count(const TinyLmm& model,
                                    const std::set<std::string>& names);

}  // namespace dlab
