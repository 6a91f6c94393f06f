#include "relsar/experiment.hpp"

#include <filesystem>
#include <fstream>

#include "relsar/config_io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace relsar {

void SweepConfig::validate() const {
    if (seq_lens.empty()) throw ConfigError("sweep.seq_lens is empty");
    for (int t : seq_lens)
        if (t < 4) throw ConfigError("sweep.seq_lens: T must be >= 4");
    if (joint_modes.empty()) throw ConfigError("sweep.joint_modes is empty");
    for (const auto& m : joint_modes)
        if (m != "permuted15" && m != "raw25") throw ConfigError("sweep.joint_modes: unknown mode '" + m + "'");
    if (byol_epochs < 1 || finetune_epochs < 1) throw ConfigError("sweep epochs must be >= 1");
}

void ExperimentConfig::validate() const {
    if (!manifest_path && !synth) throw ConfigError("dataset: set either dataset.manifest or dataset.synth");
    encoder.validate();
    heads.validate();
    augment.validate();
    byol.validate();
    recipe.validate();
    if (synth) synth->validate();
    if (semisup_budget < 1) throw ConfigError("semisup.budget must be >= 1");
    sweep.validate();
}

json to_json(const ByolConfig& c) {
    return json{{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"lr", c.lr},
                {"momentum", c.momentum},
                {"weight_decay", c.weight_decay},
                {"decay_steps", c.decay_steps},
                {"tau", c.tau}};
}

ByolConfig byol_config_from_json(const json& j) {
    check_known_keys(j, {"epochs", "batch_size", "lr", "momentum", "weight_decay", "decay_steps", "tau"}, "byol");
    ByolConfig c;
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.momentum = j.value("momentum", c.momentum);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.decay_steps = j.value("decay_steps", c.decay_steps);
    c.tau = j.value("tau", c.tau);
    c.validate();
    return c;
}

json to_json(const TrainRecipe& r) {
    return json{{"mode", to_string(r.mode)},
                {"epochs", r.epochs},
                {"batch_size", r.batch_size},
                {"peak_lr", r.peak_lr},
                {"final_lr", r.final_lr},
                {"warmup_frac", r.warmup_frac},
                {"drop_frac", r.drop_frac},
                {"weight_decay", r.weight_decay},
                {"label_smoothing", r.label_smoothing}};
}

TrainRecipe recipe_from_json(const json& j) {
    check_known_keys(j,
                     {"mode", "epochs", "batch_size", "peak_lr", "final_lr", "warmup_frac", "drop_frac",
                      "weight_decay", "label_smoothing"},
                     "recipe");
    TrainRecipe r;
    if (j.contains("mode")) r.mode = recipe_mode_from_string(j["mode"].get<std::string>());
    r.epochs = j.value("epochs", r.epochs);
    r.batch_size = j.value("batch_size", r.batch_size);
    r.peak_lr = j.value("peak_lr", r.peak_lr);
    r.final_lr = j.value("final_lr", r.final_lr);
    r.warmup_frac = j.value("warmup_frac", r.warmup_frac);
    r.drop_frac = j.value("drop_frac", r.drop_frac);
    r.weight_decay = j.value("weight_decay", r.weight_decay);
    r.label_smoothing = j.value("label_smoothing", r.label_smoothing);
    r.validate();
    return r;
}

namespace {

json synth_to_json(const SynthSpec& s) {
    return json{{"classes", s.classes},
                {"samples_per_class", s.samples_per_class},
                {"seq_len", s.seq_len},
                {"video_len", s.video_len},
                {"noise_std", s.noise_std},
                {"train_fraction", s.train_fraction},
                {"seed", s.seed},
                {"name", s.name}};
}

SynthSpec synth_from_json(const json& j) {
    check_known_keys(
        j, {"classes", "samples_per_class", "seq_len", "video_len", "noise_std", "train_fraction", "seed", "name", "dir"},
        "dataset.synth");
    SynthSpec s;
    s.classes = j.value("classes", s.classes);
    s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
    s.seq_len = j.value("seq_len", s.seq_len);
    s.video_len = j.value("video_len", s.video_len);
    s.noise_std = j.value("noise_std", s.noise_std);
    s.train_fraction = j.value("train_fraction", s.train_fraction);
    s.seed = j.value("seed", s.seed);
    s.name = j.value("name", s.name);
    s.validate();
    return s;
}

json sweep_to_json(const SweepConfig& s) {
    return json{{"seq_lens", s.seq_lens},
                {"joint_modes", s.joint_modes},
                {"byol_epochs", s.byol_epochs},
                {"finetune_epochs", s.finetune_epochs}};
}

SweepConfig sweep_from_json(const json& j) {
    check_known_keys(j, {"seq_lens", "joint_modes", "byol_epochs", "finetune_epochs"}, "sweep");
    SweepConfig s;
    if (j.contains("seq_lens")) s.seq_lens = j["seq_lens"].get<std::vector<int>>();
    if (j.contains("joint_modes")) s.joint_modes = j["joint_modes"].get<std::vector<std::string>>();
    s.byol_epochs = j.value("byol_epochs", s.byol_epochs);
    s.finetune_epochs = j.value("finetune_epochs", s.finetune_epochs);
    s.validate();
    return s;
}

} // namespace

json ExperimentConfig::resolved() const {
    json doc;
    doc["seed"] = seed;
    doc["output_dir"] = output_dir;
    json ds;
    ds["manifest"] = manifest_path ? json(*manifest_path) : json(nullptr);
    if (synth) {
        json s = synth_to_json(*synth);
        s["dir"] = synth_dir;
        ds["synth"] = std::move(s);
    } else {
        ds["synth"] = nullptr;
    }
    doc["dataset"] = std::move(ds);
    doc["encoder"] = relsar::to_json(encoder);
    doc["heads"] = relsar::to_json(heads);
    doc["augment"] = relsar::to_json(augment);
    doc["byol"] = relsar::to_json(byol);
    doc["recipe"] = relsar::to_json(recipe);
    doc["semisup"] = json{{"budget", semisup_budget}, {"full_finetune", semisup_full_finetune}};
    doc["sweep"] = sweep_to_json(sweep);
    return doc;
}

ExperimentConfig ExperimentConfig::from_json(const json& doc, const std::string& base_dir) {
    check_known_keys(doc,
                     {"seed", "output_dir", "dataset", "encoder", "heads", "augment", "byol", "recipe", "semisup",
                      "sweep"},
                     "config");
    ExperimentConfig c;
    c.seed = doc.value("seed", c.seed);
    c.output_dir = doc.value("output_dir", c.output_dir);
    if (doc.contains("dataset")) {
        const auto& ds = doc["dataset"];
        check_known_keys(ds, {"manifest", "synth"}, "dataset");
        if (ds.contains("manifest") && !ds["manifest"].is_null()) c.manifest_path = ds["manifest"].get<std::string>();
        if (ds.contains("synth") && !ds["synth"].is_null()) {
            c.synth = synth_from_json(ds["synth"]);
            c.synth_dir = ds["synth"].value("dir", c.synth_dir);
        }
    }
    if (doc.contains("encoder")) c.encoder = encoder_config_from_json(doc["encoder"]);
    if (doc.contains("heads")) c.heads = head_config_from_json(doc["heads"]);
    if (doc.contains("augment")) c.augment = augment_config_from_json(doc["augment"]);
    if (doc.contains("byol")) c.byol = byol_config_from_json(doc["byol"]);
    if (doc.contains("recipe")) c.recipe = recipe_from_json(doc["recipe"]);
    if (doc.contains("semisup")) {
        check_known_keys(doc["semisup"], {"budget", "full_finetune"}, "semisup");
        c.semisup_budget = doc["semisup"].value("budget", c.semisup_budget);
        c.semisup_full_finetune = doc["semisup"].value("full_finetune", c.semisup_full_finetune);
    }
    if (doc.contains("sweep")) c.sweep = sweep_from_json(doc["sweep"]);
    if (!base_dir.empty()) {
        // Paths in a config file are relative to the file's directory.
        auto rebase = [&](std::string& p) {
            if (!p.empty() && !fs::path(p).is_absolute()) p = (fs::path(base_dir) / p).string();
        };
        if (c.manifest_path) rebase(*c.manifest_path);
        rebase(c.synth_dir);
        rebase(c.output_dir);
    }
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    json doc;
    try {
        in >> doc;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return from_json(doc, fs::path(path).parent_path().string());
}

std::string run_id(const json& resolved_config) {
    const std::string s = resolved_config.dump();
    uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return std::string(buf);
}

WindowDataset resolve_dataset(const ExperimentConfig& cfg) {
    std::string manifest_file;
    if (cfg.manifest_path) {
        manifest_file = *cfg.manifest_path;
    } else {
        manifest_file = (fs::path(cfg.synth_dir) / "manifest.json").string();
        if (!fs::exists(manifest_file)) synth_dataset(*cfg.synth, cfg.synth_dir);
    }
    return load_dataset(ExperimentManifest::load(manifest_file));
}

std::string prepare_run_dir(const ExperimentConfig& cfg, const std::string& command) {
    const json resolved = cfg.resolved();
    const fs::path dir = fs::path(cfg.output_dir) / (command + "-" + run_id(resolved));
    fs::create_directories(dir);
    std::ofstream out(dir / "config.json");
    if (!out) throw ConfigError("cannot write frozen config under '" + dir.string() + "'");
    out << resolved.dump(2) << "\n";
    return dir.string();
}

} // namespace relsar
