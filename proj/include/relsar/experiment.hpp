// The declarative experiment config driving every CLI command, plus the
// run-directory conventions: each run writes its artifacts under
// <output_dir>/<command>-<run_id>/ together with a frozen copy of the fully
// resolved config. Run ids are content hashes of that resolved config, so
// accidental duplicate runs land in the same directory.
#pragma once

#include <optional>
#include <string>

#include <json.hpp>

#include "relsar/byol.hpp"
#include "relsar/supervised.hpp"

namespace relsar {

struct SweepConfig {
    std::vector<int> seq_lens = {5, 10, 20, 30, 40};
    std::vector<std::string> joint_modes = {"permuted15", "raw25"};
    int byol_epochs = 5;
    int finetune_epochs = 20;

    void validate() const;
};

struct ExperimentConfig {
    uint64_t seed = 7;
    std::string output_dir = "runs";
    std::optional<std::string> manifest_path;
    std::optional<SynthSpec> synth;
    std::string synth_dir = "data/synth";
    EncoderConfig encoder;
    HeadConfig heads;
    AugmentConfig augment;
    ByolConfig byol;
    TrainRecipe recipe;
    int semisup_budget = 5;
    bool semisup_full_finetune = false;
    SweepConfig sweep;

    void validate() const;
    nlohmann::json resolved() const;

    static ExperimentConfig from_json(const nlohmann::json& doc, const std::string& base_dir = "");
    static ExperimentConfig load(const std::string& path);
};

nlohmann::json to_json(const ByolConfig& c);
ByolConfig byol_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainRecipe& r);
TrainRecipe recipe_from_json(const nlohmann::json& j);

// FNV-1a hash of the resolved config, rendered as 16 hex digits.
std::string run_id(const nlohmann::json& resolved_config);

// Load the dataset named by the config, generating the synthetic dataset
// first when a synth spec is present and its manifest does not exist yet.
WindowDataset resolve_dataset(const ExperimentConfig& cfg);

// Create the run directory and freeze the resolved config inside it.
// Returns the directory path.
std::string prepare_run_dir(const ExperimentConfig& cfg, const std::string& command);

} // namespace relsar
