#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "ldcbm/backbone.hpp"
#include "ldcbm/evaluation.hpp"
#include "ldcbm/synth_data.hpp"
#include "ldcbm/trainer.hpp"

namespace ldcbm {

/// Everything one run needs. JSON sections: "data", "backbone", "train",
/// "eval"; any missing field keeps its default, any unknown key is an error.
struct RunConfig {
  DatasetSpec data;
  TrainConfig train;  // train.backbone holds the backbone section
  EvalOptions eval;
};

nlohmann::json to_json(const DatasetSpec& spec);
nlohmann::json to_json(const BackboneConfig& config);
nlohmann::json to_json(const TrainConfig& config);  // without the backbone
nlohmann::json to_json(const EvalOptions& options);
nlohmann::json to_json(const RunConfig& config);

/// Parsers throw ConfigError naming the offending key.
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);
BackboneConfig backbone_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
EvalOptions eval_options_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Reads and validates a run config; an absent path yields the defaults.
RunConfig load_run_config(const std::filesystem::path& path);
/// Reads a file that is either a bare data section or a full run config.
DatasetSpec load_dataset_spec(const std::filesystem::path& path);

}  // namespace ldcbm
