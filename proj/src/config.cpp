#include "dlab/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

#include <json.hpp>

#include "dlab/checkpoint.hpp"
#include "dlab/param_groups.hpp"
#include "dlab/tasks.hpp"

namespace dlab {

namespace {

using Json = nlohmann::ordered_json;

void reject_unknown_keys(const Json& obj, const std::string& where,
                         const std::set<std::string>& allowed) {
    if (!obj.is_object())
        throw ConfigError("config: " + where + " must be an object");
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key))
            throw ConfigError("config: unknown key '" + where + key + "'");
}

template <typename T>
void read_number(const Json& obj, const std::string& where,
                 const std::string& key, T& out) {
    if (!obj.contains(key)) return;
    const Json& v = obj.at(key);
    if (!v.is_number())
        throw ConfigError("config: '" + where + key + "' must be a number");
    out = v.get<T>();
}

void read_int(const Json& obj, const std::string& where,
              const std::string& key, int& out) {
    if (!obj.contains(key)) return;
    const Json& v = obj.at(key);
    if (!v.is_number_integer())
        throw ConfigError("config: '" + where + key + "' must be an integer");
    out = v.get<int>();
}

void read_string(const Json& obj, const std::string& where,
                 const std::string& key, std::string& out) {
    if (!obj.contains(key)) return;
    const Json& v = obj.at(key);
    if (!v.is_string())
        throw ConfigError("config: '" + where + key + "' must be a string");
    out = v.get<std::string>();
}

ExperimentConfig parse_config(const Json& root) {
    ExperimentConfig cfg;
    reject_unknown_keys(root, "",
                        {"seed", "output_dir", "threads", "model", "train",
                         "pretrain", "group", "task", "mitigation",
                         "curriculum", "probe", "attribution"});

    if (root.contains("seed")) {
        const Json& v = root.at("seed");
        if (!v.is_number_unsigned() && !v.is_number_integer())
            throw ConfigError("config: 'seed' must be an integer");
        cfg.seed = v.get<std::uint64_t>();
    }
    read_string(root, "", "output_dir", cfg.output_dir);
    read_int(root, "", "threads", cfg.threads);
    read_string(root, "", "group", cfg.group);
    read_string(root, "", "task", cfg.task);

    if (root.contains("model")) {
        const Json& m = root.at("model");
        reject_unknown_keys(m, "model.",
                            {"layers", "d", "heads", "d_k", "hidden", "vocab",
                             "visual_tokens", "d_v"});
        read_int(m, "model.", "layers", cfg.model.layers);
        read_int(m, "model.", "d", cfg.model.d);
        read_int(m, "model.", "heads", cfg.model.heads);
        read_int(m, "model.", "d_k", cfg.model.d_k);
        read_int(m, "model.", "hidden", cfg.model.hidden);
        read_int(m, "model.", "vocab", cfg.model.vocab);
        read_int(m, "model.", "visual_tokens", cfg.model.visual_tokens);
        read_int(m, "model.", "d_v", cfg.model.d_v);
    }

    if (root.contains("train")) {
        const Json& t = root.at("train");
        reject_unknown_keys(t, "train.",
                            {"lr", "batch_size", "warmup_frac", "steps"});
        read_number(t, "train.", "lr", cfg.train.lr);
        read_int(t, "train.", "batch_size", cfg.train.batch_size);
        read_number(t, "train.", "warmup_frac", cfg.train.warmup_frac);
        read_int(t, "train.", "steps", cfg.train_steps);
    }

    if (root.contains("pretrain")) {
        const Json& p = root.at("pretrain");
        reject_unknown_keys(p, "pretrain.", {"steps"});
        read_int(p, "pretrain.", "steps", cfg.pretrain_steps);
    }

    if (root.contains("mitigation")) {
        const Json& m = root.at("mitigation");
        reject_unknown_keys(m, "mitigation.",
                            {"kind", "lora", "wise_ft", "lwf"});
        std::string kind = mitigation_name(cfg.mitigation.kind);
        read_string(m, "mitigation.", "kind", kind);
        cfg.mitigation.kind = mitigation_from_name(kind);
        if (m.contains("lora")) {
            const Json& l = m.at("lora");
            reject_unknown_keys(l, "mitigation.lora.", {"rank", "alpha"});
            read_int(l, "mitigation.lora.", "rank", cfg.mitigation.lora_rank);
            read_number(l, "mitigation.lora.", "alpha",
                        cfg.mitigation.lora_alpha);
        }
        if (m.contains("wise_ft")) {
            const Json& w = m.at("wise_ft");
            reject_unknown_keys(w, "mitigation.wise_ft.", {"beta"});
            read_number(w, "mitigation.wise_ft.", "beta",
                        cfg.mitigation.wise_ft_beta);
        }
        if (m.contains("lwf")) {
            const Json& l = m.at("lwf");
            reject_unknown_keys(l, "mitigation.lwf.",
                                {"lambda", "tau", "max_positions"});
            read_number(l, "mitigation.lwf.", "lambda",
                        cfg.mitigation.lwf.lambda);
            read_number(l, "mitigation.lwf.", "tau", cfg.mitigation.lwf.tau);
            read_int(l, "mitigation.lwf.", "max_positions",
                     cfg.mitigation.lwf.max_positions);
        }
    }

    if (root.contains("curriculum")) {
        const Json& c = root.at("curriculum");
        reject_unknown_keys(c, "curriculum.", {"order", "train_n", "eval_n"});
        read_string(c, "curriculum.", "order", cfg.curriculum.order);
        read_int(c, "curriculum.", "train_n", cfg.curriculum.train_n);
        read_int(c, "curriculum.", "eval_n", cfg.curriculum.eval_n);
    }

    if (root.contains("probe")) {
        const Json& p = root.at("probe");
        reject_unknown_keys(p, "probe.",
                            {"batch_size", "max_len", "grid", "train_steps"});
        read_int(p, "probe.", "batch_size", cfg.probe.batch_size);
        read_int(p, "probe.", "max_len", cfg.probe.max_len);
        read_int(p, "probe.", "train_steps", cfg.probe.train_steps);
        if (p.contains("grid")) {
            const Json& g = p.at("grid");
            if (!g.is_array() || g.empty())
                throw ConfigError(
                    "config: 'probe.grid' must be a nonempty array");
            cfg.probe.grid.clear();
            for (const Json& v : g) {
                if (!v.is_number_integer())
                    throw ConfigError(
                        "config: 'probe.grid' entries must be integers");
                cfg.probe.grid.push_back(v.get<int>());
            }
        }
    }

    if (root.contains("attribution")) {
        const Json& a = root.at("attribution");
        reject_unknown_keys(a, "attribution.", {"examples"});
        read_int(a, "attribution.", "examples", cfg.attribution_examples);
    }

    if (const char* env = std::getenv("DLAB_SEED")) {
        std::string s(env);
        if (s.empty()) throw ConfigError("DLAB_SEED is set but empty");
        char* end = nullptr;
        unsigned long long v = std::strtoull(s.c_str(), &end, 10);
        if (end == s.c_str() || *end != '\0')
            throw ConfigError("DLAB_SEED is not an integer: " + s);
        cfg.seed = static_cast<std::uint64_t>(v);
    }

    cfg.validate();
    return cfg;
}

}  // namespace

void ExperimentConfig::validate() const {
    model.validate();
    ParamGroupSpec::parse(group);
    task_kind_from_name(task);
    if (threads < 1) throw ConfigError("config: threads must be >= 1");
    if (train.lr <= 0.0) throw ConfigError("config: train.lr must be > 0");
    if (train.batch_size < 1)
        throw ConfigError("config: train.batch_size must be >= 1");
    if (train.warmup_frac < 0.0 || train.warmup_frac > 1.0)
        throw ConfigError("config: train.warmup_frac must lie in [0, 1]");
    if (train_steps < 1) throw ConfigError("config: train.steps must be >= 1");
    if (pretrain_steps < 0)
        throw ConfigError("config: pretrain.steps must be >= 0");
    if (curriculum.order != "default" && curriculum.order != "alt1" &&
        curriculum.order != "alt2")
        throw ConfigError("config: unknown curriculum order '" +
                          curriculum.order + "'");
    if (curriculum.train_n < 1 || curriculum.eval_n < 1)
        throw ConfigError("config: curriculum sizes must be >= 1");
    if (mitigation.lora_rank < 1)
        throw ConfigError("config: mitigation.lora.rank must be >= 1");
    if (mitigation.wise_ft_beta < 0.0 || mitigation.wise_ft_beta > 1.0)
        throw ConfigError("config: mitigation.wise_ft.beta must lie in [0, 1]");
    if (mitigation.lwf.lambda < 0.0)
        throw ConfigError("config: mitigation.lwf.lambda must be >= 0");
    if (mitigation.lwf.tau <= 0.0)
        throw ConfigError("config: mitigation.lwf.tau must be > 0");
    if (mitigation.lwf.max_positions < 1)
        throw ConfigError("config: mitigation.lwf.max_positions must be >= 1");
    if (probe.batch_size < 1 || probe.max_len < 1 || probe.train_steps < 1)
        throw ConfigError("config: probe sizes must be >= 1");
    for (int g : probe.grid)
        if (g < 1) throw ConfigError("config: probe.grid steps must be >= 1");
    if (attribution_examples < 1)
        throw ConfigError("config: attribution.examples must be >= 1");
}

ExperimentConfig config_from_json_text(const std::string& text) {
    Json root = Json::parse(text, nullptr, false);
    if (root.is_discarded())
        throw ConfigError("config: invalid JSON");
    return parse_config(root);
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
    return config_from_json_text(text);
}

std::string config_json(const ExperimentConfig& cfg) {
    Json j;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    j["threads"] = cfg.threads;
    j["model"] = {{"layers", cfg.model.layers},
                  {"d", cfg.model.d},
                  {"heads", cfg.model.heads},
                  {"d_k", cfg.model.d_k},
                  {"hidden", cfg.model.hidden},
                  {"vocab", cfg.model.vocab},
                  {"visual_tokens", cfg.model.visual_tokens},
                  {"d_v", cfg.model.d_v}};
    j["train"] = {{"lr", cfg.train.lr},
                  {"batch_size", cfg.train.batch_size},
                  {"warmup_frac", cfg.train.warmup_frac},
                  {"steps", cfg.train_steps}};
    j["pretrain"] = {{"steps", cfg.pretrain_steps}};
    j["group"] = cfg.group;
    j["task"] = cfg.task;
    j["mitigation"] = {
        {"kind", mitigation_name(cfg.mitigation.kind)},
        {"lora",
         {{"rank", cfg.mitigation.lora_rank},
          {"alpha", cfg.mitigation.lora_alpha}}},
        {"wise_ft", {{"beta", cfg.mitigation.wise_ft_beta}}},
        {"lwf",
         {{"lambda", cfg.mitigation.lwf.lambda},
          {"tau", cfg.mitigation.lwf.tau},
          {"max_positions", cfg.mitigation.lwf.max_positions}}}};
    j["curriculum"] = {{"order", cfg.curriculum.order},
                       {"train_n", cfg.curriculum.train_n},
                       {"eval_n", cfg.curriculum.eval_n}};
    j["probe"] = {{"batch_size", cfg.probe.batch_size},
                  {"max_len", cfg.probe.max_len},
                  {"grid", cfg.probe.grid},
                  {"train_steps", cfg.probe.train_steps}};
    j["attribution"] = {{"examples", cfg.attribution_examples}};
    return j.dump(2);
}

void write_manifest(
    const std::string& dir, const ExperimentConfig& cfg,
    const std::vector<std::pair<std::string, std::string>>& run_state) {
    Json j;
    j["format"] = {{"manifest", 1},
                   {"checkpoint", kCheckpointVersion},
                   {"matrix_csv", 1},
                   {"probe_csv", 1},
                   {"attribution_csv", 1}};
    j["config"] = Json::parse(config_json(cfg));
    Json state = Json::object();
    for (const auto& [key, value] : run_state) state[key] = value;
    j["run_state"] = state;

    std::filesystem::create_directories(dir);
    std::ofstream f(dir + "/manifest.json", std::ios::trunc);
    if (!f) throw ConfigError("config: cannot write " + dir + "/manifest.json");
    f << j.dump(2) << "\n";
}

}  // namespace dlab
