#include "dlab/mitigation.hpp"

#include <algorithm>
#include <cmath>

namespace dlab {

void lora_attach(TinyLmm& model, const std::vector<std::string>& targets,
                 int rank, float alpha, const Rng& rng) {
    if (!model.lora_targets.empty())
        throw ConfigError("lora_attach: adapters already attached");
    if (rank < 1) throw ConfigError("lora_attach: rank must be >= 1");
    for (const std::string& name : targets) {
        const DenseTensor& w = model.param(name);
        if (w.rank() != 2)
            throw ConfigError("lora_attach: target must be a matrix: " + name);
        int d = w.rows();
        int k = w.cols();
        if (rank > std::min(d, k))
            throw ConfigError("lora_attach: rank exceeds min(d, k) for " +
                              name);
        Rng sub = rng.substream("lora." + name);
        float bound = 1.0f / std::sqrt(static_cast<float>(k));
        DenseTensor a({rank, k});
        for (std::int64_t i = 0; i < a.size(); ++i)
            a[i] = sub.uniform(-bound, bound);
        DenseTensor b({d, rank});
        model.params["lora." + name + ".a"] = std::move(a);
        model.params["lora." + name + ".b"] = std::move(b);
    }
    model.lora_targets = targets;
    model.lora_rank = rank;
    model.lora_alpha = alpha;
}

std::vector<std::string> lora_default_targets(const ModelConfig& cfg) {
    std::vector<std::string> out;
    for (int l = 0; l < cfg.layers; ++l)
        for (const char* f : {"wgate", "wup", "wdown"})
            out.push_back(block_param(l, f));
    return out;
}

void lora_merge(TinyLmm& model) {
    if (model.lora_targets.empty())
        throw ConfigError("lora_merge: no adapters attached");
    float factor = model.lora_alpha / static_cast<float>(model.lora_rank);
    for (const std::string& name : model.lora_targets) {
        const DenseTensor& a = model.param("lora." + name + ".a");
        const DenseTensor& b = model.param("lora." + name + ".b");
        DenseTensor delta = matmul(b, a);
        DenseTensor& w = model.param(name);
        for (std::int64_t i = 0; i < w.size(); ++i)
            w[i] += factor * delta[i];
        model.params.erase("lora." + name + ".a");
        model.params.erase("lora." + name + ".b");
    }
    model.lora_targets.clear();
    model.lora_rank = 0;
    model.lora_alpha = 0.0f;
}

std::vector<std::string> lora_param_names(const TinyLmm& model) {
    std::vector<std::string> out;
    for (const std::string& name : model.lora_targets) {
        out.push_back("lora." + name + ".a");
        out.push_back("lora." + name + ".b");
    }
    return out;
}

std::int64_t lora_trainable_count(const TinyLmm& model) {
    std::int64_t n = 0;
    for (const std::string& name : lora_param_names(model))
        n += model.param(name).size();
    return n;
}

TinyLmm wise_ft_interpolate(const TinyLmm& base, const TinyLmm& tuned,
                            double beta) {
    if (beta < 0.0 || beta > 1.0)
        throw ConfigError("wise_ft_interpolate: beta must be in [0, 1]");
    if (base.cfg != tuned.cfg)
        throw ConfigError("wise_ft_interpolate: config mismatch");
    if (base.params.size() != tuned.params.size())
        throw ConfigError("wise_ft_interpolate: parameter sets differ");
    if (beta == 0.0) return base;
    if (beta == 1.0) return tuned;
    TinyLmm out = base;
    for (auto& [name, p] : out.params) {
        const DenseTensor& t = tuned.param(name);
        if (!t.same_shape(p))
            throw ConfigError("wise_ft_interpolate: shape mismatch for " + name);
        for (std::int64_t i = 0; i < p.size(); ++i)
            p[i] = static_cast<float>((1.0 - beta) * p[i] + beta * t[i]);
    }
    return out;
}

void moe_wrap(TinyLmm& model) {
    if (model.moe) throw ConfigError("moe_wrap: model already wrapped");
    for (int l = 0; l < model.cfg.layers; ++l) {
        model.params[block_param(l, "moe_wgate")] =
            model.param(block_param(l, "wgate"));
        model.params[block_param(l, "moe_wup")] =
            model.param(block_param(l, "wup"));
        model.params[block_param(l, "moe_wdown")] =
            model.param(block_param(l, "wdown"));
        model.params[block_param(l, "moe_gate")] = DenseTensor({model.cfg.d, 2});
    }
    model.moe = true;
}

std::vector<std::string> moe_param_names(const TinyLmm& model) {
    std::vector<std::string> out;
    for (int l = 0; l < model.cfg.layers; ++l)
        for (const char* f : {"moe_gate", "moe_wgate", "moe_wup", "moe_wdown"})
            out.push_back(block_param(l, f));
    return out;
}

}  // namespace dlab
