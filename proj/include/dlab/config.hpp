#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dlab/model.hpp"
#include "dlab/sequence.hpp"

namespace dlab {

struct ProbeConfig {
    int batch_size = 100;
    int max_len = 6;
    std::vector<int> grid = {1, 10, 100, 1000};
    int train_steps = 1000;
};

struct CurriculumConfig {
    std::string order = "default";
    int train_n = 512;
    int eval_n = 256;
};

struct ExperimentConfig {
    std::uint64_t seed = 1234;
    std::string output_dir = "out";
    int threads = 1;
    ModelConfig model;
    TrainSettings train;
    int train_steps = 1000;
    int pretrain_steps = 300;
    std::string group = "sa_proj";
    std::string task = "count";
    MitigationSpec mitigation;
    CurriculumConfig curriculum;
    ProbeConfig probe;
    int attribution_examples = 8;

    void validate() const;
};

// Parses a JSON config file. Every key is optional and falls back to the
// default above; unknown keys anywhere in the document are a hard error. The
// DLAB_SEED environment variable, when set, overrides the config seed.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json_text(const std::string& text);

// The fully resolved config as canonical JSON text (2-space indent), suitable
// for embedding in a run manifest.
std::string config_json(const ExperimentConfig& cfg);

// Writes <dir>/manifest.json: format versions, the resolved config, and any
// run-state entries accumulated during the command (step counters, RNG
// positions). Content is a pure function of its inputs.
void write_manifest(const std::string& dir, const ExperimentConfig& cfg,
                    const std::vector<std::pair<std::string, std::string>>&
                        run_state = {});

}  // namespace dlab
