// Versioned self-describing checkpoint container: a JSON header (config
// echo, tensor directory, free-form metadata) followed by a raw float32
// blob. Files round-trip bitwise through load/save.
#pragma once

#include <map>
#include <string>

#include <json.hpp>

#include "relsar/model.hpp"
#include "relsar/params.hpp"

namespace relsar {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Checkpoint {
    EncoderConfig encoder;
    HeadConfig heads;
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, ParamSet> sections;

    bool has(const std::string& section) const { return sections.count(section) != 0; }
    ParamSet& section(const std::string& name);
    const ParamSet& section(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

} // namespace relsar
