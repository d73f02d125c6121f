#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tinydet/losses.hpp"
#include "tinydet/model.hpp"
#include "tinydet/optim.hpp"
#include "tinydet/synth.hpp"

namespace tinydet::config {

struct TrainConfig {
    int batch_size = 2;
    int epochs = 1;
    int max_steps = 0;  // 0 = run every batch of every epoch
    std::uint64_t seed = 7;
    std::string dataset = "data";
    std::string out = "run";
};

struct GenerateConfig {
    int count = 200;
    std::string out = "data";
};

struct RunConfig {
    synth::SceneConfig scene;
    synth::ProposalConfig proposals;
    model::ModelConfig model;
    losses::LossConfig loss;
    optim::OptimConfig optim;
    TrainConfig train;
    GenerateConfig generate;
};

// Parses a config JSON object; unknown keys are rejected so typos cannot
// silently fall back to defaults.
RunConfig parse_config(const nlohmann::json& j);
RunConfig load_config_file(const std::string& path);

nlohmann::json to_json(const RunConfig& cfg);

// Every violated precondition, not just the first.
std::vector<std::string> validate(const RunConfig& cfg);

// Throws ConfigError listing all violations.
void require_valid(const RunConfig& cfg);

}  // namespace tinydet::config
