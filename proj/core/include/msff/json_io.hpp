#pragma once

// JSON mappings for the configuration structs. Field names in the documents
// match the C++ member names. Reading is strict: unknown keys and wrongly
// typed values raise ConfigError naming the key; missing keys keep defaults.

#include <nlohmann/json.hpp>

#include "msff/model.hpp"
#include "msff/synth_data.hpp"
#include "msff/training.hpp"

namespace msff {

using Json = nlohmann::json;

Json to_json(const ModelConfig& config);
Json to_json(const GeneratorConfig& config);
Json to_json(const TrainConfig& config);

/// `section` prefixes field names in errors, e.g. "model.branch_channels".
void update_from_json(ModelConfig& config, const Json& j, const std::string& section = "model");
void update_from_json(GeneratorConfig& config, const Json& j,
                      const std::string& section = "generator");
void update_from_json(TrainConfig& config, const Json& j, const std::string& section = "train");

std::string to_string(Activation a);
std::string to_string(OptimizerKind k);

}  // namespace msff
