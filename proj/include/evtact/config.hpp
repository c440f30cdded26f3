#pragma once

#include <string>

#include <json.hpp>

#include "evtact/frames.hpp"
#include "evtact/model.hpp"
#include "evtact/pipeline.hpp"

namespace evt {

// JSON mappings for the config structs. Parsing fills missing keys with the
// struct defaults and rejects unknown keys, reporting the JSON path of the
// offender (e.g. "train.augment.hflip_prob").
nlohmann::json encoder_config_to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j,
                                       const std::string& path);

nlohmann::json augment_config_to_json(const AugmentConfig& c);
AugmentConfig augment_config_from_json(const nlohmann::json& j,
                                       const std::string& path);

nlohmann::json model_config_to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j,
                                   const std::string& path);

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j,
                                   const std::string& path);

// Everything one run needs: model and training hyperparameters plus dataset
// locations and the output directory.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  std::string train_manifest;
  std::string test_manifest;
  std::string output_dir = "out";
  int eval_clips = 5;

  void validate() const;

  bool operator==(const RunConfig&) const = default;
};

RunConfig run_config_from_json_text(const std::string& text);
std::string run_config_to_json_text(const RunConfig& cfg);  // defaults expanded

RunConfig load_run_config(const std::string& path);
void save_run_config(const std::string& path, const RunConfig& cfg);

}  // namespace evt
