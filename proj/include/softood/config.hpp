#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "softood/cotrain.hpp"
#include "softood/detector.hpp"
#include "softood/eval.hpp"
#include "softood/oodgen.hpp"

namespace softood {

using nlohmann::json;

// Config sections. Parsing overlays a JSON object on the given defaults and
// rejects unknown keys.
json to_json(const ModelConfig& c);
json to_json(const TrainConfig& c);
json to_json(const PseudoOodConfig& c);
json to_json(const SynthConfig& c);
json to_json(const BoundaryFitConfig& c);
json to_json(const ExperimentConfig& c);

void overlay(ModelConfig& c, const json& j);
void overlay(TrainConfig& c, const json& j);
void overlay(PseudoOodConfig& c, const json& j);
void overlay(SynthConfig& c, const json& j);
void overlay(BoundaryFitConfig& c, const json& j);
void overlay(ExperimentConfig& c, const json& j);

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

/// FNV-1a over the canonical JSON of the config, as 16 hex digits.
std::string config_hash(const ExperimentConfig& c);
std::string fnv1a_hex(const std::string& bytes);

json to_json(const MetricReport& r);
json to_json(const ExperimentReport& r, bool with_timestamp = true);

struct Checkpoint {
  std::size_t input_dim = 0;
  IntentSpace intents;
  ModelConfig model_config;
  TrainConfig train_config;
  DetectorModel model;
  std::optional<Boundaries> boundaries;
};

json checkpoint_to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const json& j);
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Stable content hash of a list of examples (ids, labels, and features).
std::string dataset_hash(const std::vector<Example>& examples);

}  // namespace softood
