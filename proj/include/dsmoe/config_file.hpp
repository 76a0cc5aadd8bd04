#pragma once

#include <filesystem>
#include <string>

#include "dsmoe/config.hpp"
#include "dsmoe/train.hpp"

namespace dsmoe {

// JSON document: ModelConfig keys at top level, TrainConfig keys under "train".
struct ConfigFile {
  ModelConfig model;
  TrainConfig train;
};

ConfigFile parse_config_text(const std::string& text);
// Canonical text (sorted keys, fixed formatting); stable across round trips.
std::string config_to_text(const ConfigFile& config);

// Accepts the path as given or with ".json" appended.
ConfigFile load_config_file(const std::filesystem::path& path);

}  // namespace dsmoe
