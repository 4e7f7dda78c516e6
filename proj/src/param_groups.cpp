#include "dlab/param_groups.hpp"

#include <cstring>

namespace dlab {

namespace {

const std::map<std::string, Group>& name_table() {
    static const std::map<std::string, Group> table = {
        {"full", Group::Full},
        {"vision", Group::VisionEncoder},
        {"projector", Group::Projector},
        {"vision+projector", Group::VisionAndProjector},
        {"llm", Group::Llm},
        {"sa_proj", Group::SAProj},
        {"sa_proj_qkv", Group::SAProjQKV},
        {"mlp", Group::Mlp},
        {"mlp_gate_up", Group::MlpGateUp},
    };
    return table;
}

void insert_block_fields(const TinyLmm& model, std::set<std::string>& out,
                         const std::vector<std::string>& fields) {
    for (int l = 0; l < model.cfg.layers; ++l)
        for (const std::string& f : fields) out.insert(block_param(l, f));
}

}  // namespace

ParamGroupSpec ParamGroupSpec::single(Group g) {
    if (g == Group::Composite)
        throw ConfigError("ParamGroupSpec: composite needs members");
    return ParamGroupSpec{g, {}};
}

ParamGroupSpec ParamGroupSpec::composite(std::vector<Group> groups) {
    ParamGroupSpec spec;
    spec.kind = Group::Composite;
    for (Group g : groups) spec.members.push_back(single(g));
    return spec;
}

ParamGroupSpec ParamGroupSpec::parse(const std::string& text) {
    auto it = name_table().find(text);
    if (it != name_table().end()) return single(it->second);
    // Split on '+' and require every member to be a known name.
    std::vector<Group> members;
    std::size_t start = 0;
    while (start <= text.size()) {
        std::size_t plus = text.find('+', start);
        std::string part = text.substr(
            start, plus == std::string::npos ? std::string::npos : plus - start);
        auto mit = name_table().find(part);
        if (mit == name_table().end())
            throw ConfigError("unknown parameter group '" + part + "'");
        members.push_back(mit->second);
        if (plus == std::string::npos) break;
        start = plus + 1;
    }
    if (members.size() < 2)
        throw ConfigError("unknown parameter group '" + text + "'");
    return composite(members);
}

const std::vector<std::string>& group_names() {
    static const std::vector<std::string> names = {
        "full",    "vision",  "projector",   "vision+projector", "llm",
        "sa_proj", "sa_proj_qkv", "mlp",     "mlp_gate_up"};
    return names;
}

std::string group_name(Group g) {
    for (const auto& [name, kind] : name_table())
        if (kind == g) return name;
    return "composite";
}

std::set<std::string> resolve_group(const ParamGroupSpec& spec,
                                    const TinyLmm& model) {
    std::set<std::string> out;
    switch (spec.kind) {
        case Group::Full:
            for (const std::string& n : canonical_param_names(model.cfg))
                out.insert(n);
            break;
        case Group::VisionEncoder:
            out.insert("perception.w");
            break;
        case Group::Projector:
            out.insert("projector.w");
            break;
        case Group::VisionAndProjector:
            out.insert("perception.w");
            out.insert("projector.w");
            break;
        case Group::Llm:
            insert_block_fields(model, out,
                                {"wq", "wk", "wv", "wo", "wgate", "wup", "wdown"});
            break;
        case Group::SAProj:
            insert_block_fields(model, out, {"wq", "wk", "wv", "wo"});
            break;
        case Group::SAProjQKV:
            insert_block_fields(model, out, {"wq", "wk", "wv"});
            break;
        case Group::Mlp:
            insert_block_fields(model, out, {"wgate", "wup", "wdown"});
            break;
        case Group::MlpGateUp:
            insert_block_fields(model, out, {"wgate", "wup"});
            break;
        case Group::Composite: {
            if (spec.members.empty())
                throw ConfigError("composite group has no members");
            for (const ParamGroupSpec& m : spec.members)
                for (const std::string& n : resolve_group(m, model))
                    out.insert(n);
            break;
        }
    }
    return out;
}

FreezeMask apply_freeze(const TinyLmm& model,
                        const std::set<std::string>& trainable) {
    FreezeMask mask;
    mask.trainable = trainable;
    for (const std::string& name : trainable)
        if (!model.has_param(name))
            throw ConfigError("apply_freeze: unknown parameter " + name);
    for (const auto& [name, tensor] : model.params) {
        if (trainable.count(name)) continue;
        std::vector<std::uint8_t> bytes(
            static_cast<std::size_t>(tensor.size()) * sizeof(float));
        if (!bytes.empty())
            std::memcpy(bytes.data(), tensor.data(), bytes.size());
        mask.frozen_bytes.emplace(name, std::move(bytes));
    }
    return mask;
}

void assert_frozen_intact(const TinyLmm& model, const FreezeMask& mask) {
    for (const auto& [name, bytes] : mask.frozen_bytes) {
        const DenseTensor& t = model.param(name);
        if (static_cast<std::size_t>(t.size()) * sizeof(float) != bytes.size() ||
            (!bytes.empty() &&
             std::memcmp(bytes.data(), t.data(), bytes.size()) != 0))
            throw InternalError("frozen parameter " + name + " was modified");
    }
}

std::int64_t trainable_scalar_count(const TinyLmm& model,
                                    const std::set<std::string>& names) {
    std::int64_t n = 0;
    for (const std::string& name : names) n += model.param(name).size();
    return n;
}

}  // namespace dlab
