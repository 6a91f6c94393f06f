// JSON (de)serialization for the config structs shared by checkpoints and
// the experiment config file. Readers reject unknown keys so typos in config
// files fail loudly instead of silently using defaults.
#pragma once

#include <json.hpp>

#include "relsar/augment.hpp"
#include "relsar/model.hpp"

namespace relsar {

void check_known_keys(const nlohmann::json& obj, std::initializer_list<const char*> known,
                      const std::string& context);

nlohmann::json to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const HeadConfig& c);
HeadConfig head_config_from_json(const nlohmann::json& j);

nlohmann::json to_json(const AugmentConfig& c);
AugmentConfig augment_config_from_json(const nlohmann::json& j);

} // namespace relsar
