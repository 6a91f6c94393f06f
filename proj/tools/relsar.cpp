// relsar: command-line driver for synthetic data generation, ingestion,
// BYOL pre-training, supervised training and fine-tuning, semi-supervised
// probes, evaluation, the T x joint-mode sweep, and config inspection.
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "relsar/checkpoint.hpp"
#include "relsar/experiment.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace relsar;

namespace {

struct CommonArgs {
    std::string config_path;
    std::optional<uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<int> epochs;
};

ExperimentConfig load_config(const CommonArgs& args) {
    ExperimentConfig cfg = ExperimentConfig::load(args.config_path);
    if (args.seed) cfg.seed = *args.seed;
    if (args.out_dir) cfg.output_dir = *args.out_dir;
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool with_epochs = false) {
    cmd->add_option("--config", args.config_path, "experiment config file")->required();
    cmd->add_option("--seed", args.seed, "override config seed");
    cmd->add_option("--out", args.out_dir, "override output directory");
    if (with_epochs) cmd->add_option("--epochs", args.epochs, "override epoch count");
}

void write_json(const std::string& path, const json& doc) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << doc.dump(2) << "\n";
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    out << text;
}

void require_artifacts(const std::vector<std::string>& paths) {
    for (const auto& p : paths)
        if (!fs::exists(p)) throw std::runtime_error("expected artifact missing: " + p);
}

Checkpoint model_checkpoint(const SupervisedModel& model, int num_classes) {
    Checkpoint c;
    c.encoder = model.encoder_cfg;
    c.meta = {{"kind", "classifier_model"}, {"num_classes", num_classes}};
    c.sections["encoder"] = model.encoder;
    c.sections["classifier"] = model.classifier;
    return c;
}

SupervisedModel model_from_checkpoint(const Checkpoint& ckpt) {
    SupervisedModel m;
    m.encoder_cfg = ckpt.encoder;
    m.encoder = ckpt.section("encoder");
    m.classifier = ckpt.section("classifier");
    return m;
}

void print_warnings(const WindowDataset& ds) {
    for (const auto& w : ds.warnings) std::cerr << "warning: " << w << "\n";
}

int cmd_synth(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args);
    if (!cfg.synth) throw ConfigError("dataset.synth: required by the synth command");
    const std::string dir = prepare_run_dir(cfg, "synth");
    ExperimentManifest m = synth_dataset(*cfg.synth, cfg.synth_dir);
    json summary = {{"manifest", (fs::path(cfg.synth_dir) / "manifest.json").string()},
                    {"classes", m.classes.size()},
                    {"samples", m.samples.size()}};
    write_json(dir + "/summary.json", summary);
    require_artifacts({dir + "/config.json", dir + "/summary.json",
                       (fs::path(cfg.synth_dir) / "manifest.json").string()});
    std::cout << "dataset written: " << cfg.synth_dir << " (" << m.samples.size() << " clips)\n";
    return 0;
}

int cmd_ingest(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args);
    const std::string dir = prepare_run_dir(cfg, "ingest");
    WindowDataset ds = resolve_dataset(cfg);
    print_warnings(ds);
    json stats = {{"classes", ds.manifest.classes},
                  {"selected_joints", ds.selected_joints},
                  {"seq_len", ds.manifest.seq_len},
                  {"train_windows", ds.train.size()},
                  {"test_windows", ds.test.size()},
                  {"warnings", ds.warnings}};
    write_json(dir + "/dataset_stats.json", stats);
    require_artifacts({dir + "/config.json", dir + "/dataset_stats.json"});
    std::cout << stats.dump(2) << "\n";
    return 0;
}

int cmd_pretrain(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args);
    if (args.epochs) cfg.byol.epochs = *args.epochs;
    const std::string dir = prepare_run_dir(cfg, "pretrain");
    WindowDataset ds = resolve_dataset(cfg);
    print_warnings(ds);
    auto result = pretrain(ds, cfg.encoder, cfg.heads, cfg.byol, cfg.augment, cfg.seed, dir + "/pretrain_log.jsonl",
                           [](int epoch, double loss) {
                               std::cout << "epoch " << epoch << " mean loss " << loss << "\n";
                           });
    save_checkpoint(dir + "/byol_full.ckpt", full_checkpoint(result.state, result.optimizer));
    save_checkpoint(dir + "/encoder.ckpt", encoder_checkpoint(result.state));
    require_artifacts({dir + "/config.json", dir + "/byol_full.ckpt", dir + "/encoder.ckpt",
                       dir + "/pretrain_log.jsonl"});
    std::cout << "final collapse metric " << result.final_collapse << "\n";
    std::cout << "encoder checkpoint: " << dir << "/encoder.ckpt\n";
    return 0;
}

void write_reports(const std::string& dir, const TrainResult& result, bool have_test) {
    write_json(dir + "/report_train.json", result.train_report.to_json());
    if (have_test) {
        write_json(dir + "/report_test.json", result.test_report.to_json());
        write_text(dir + "/confusion_test.csv", result.test_report.confusion_csv());
    }
    write_json(dir + "/epoch_loss.json", json(result.epoch_loss));
}

int cmd_train(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args);
    if (args.epochs) cfg.recipe.epochs = *args.epochs;
    cfg.recipe.mode = RecipeMode::Baseline;
    const std::string dir = prepare_run_dir(cfg, "train");
    WindowDataset ds = resolve_dataset(cfg);
    print_warnings(ds);
    TrainResult result = train_supervised(ds, cfg.encoder, cfg.recipe, cfg.seed);
    save_checkpoint(dir + "/model.ckpt", model_checkpoint(result.model, ds.num_classes()));
    write_reports(dir, result, !ds.test.empty());
    require_artifacts({dir + "/config.json", dir + "/model.ckpt", dir + "/report_train.json"});
    std::cout << "train window accuracy " << result.train_report.window_accuracy << "\n";
    if (!ds.test.empty()) std::cout << "test video accuracy " << result.test_report.video_accuracy << "\n";
    return 0;
}

int cmd_finetune(const CommonArgs& args, const std::string& checkpoint, const std::string& mode) {
    ExperimentConfig cfg = load_config(args);
    if (args.epochs) cfg.recipe.epochs = *args.epochs;
    if (!mode.empty()) cfg.recipe.mode = recipe_mode_from_string(mode);
    if (cfg.recipe.mode == RecipeMode::Baseline) cfg.recipe.mode = RecipeMode::FullFinetune;
    const std::string dir = prepare_run_dir(cfg, "finetune");
    WindowDataset ds = resolve_dataset(cfg);
    print_warnings(ds);
    Checkpoint ckpt = load_checkpoint(checkpoint);
    TrainResult result = finetune(ds, cfg.recipe, ckpt, cfg.seed);
    save_checkpoint(dir + "/model.ckpt", model_checkpoint(result.model, ds.num_classes()));
    write_reports(dir, result, !ds.test.empty());
    require_artifacts({dir + "/config.json", dir + "/model.ckpt", dir + "/report_train.json"});
    std::cout << to_string(cfg.recipe.mode) << ": train window accuracy " << result.train_report.window_accuracy
              << "\n";
    if (!ds.test.empty()) std::cout << "test video accuracy " << result.test_report.video_accuracy << "\n";
    return 0;
}

int cmd_semisup(const CommonArgs& args, const std::string& checkpoint, std::optional<int> budget) {
    ExperimentConfig cfg = load_config(args);
    if (args.epochs) cfg.recipe.epochs = *args.epochs;
    if (budget) cfg.semisup_budget = *budget;
    const std::string dir = prepare_run_dir(cfg, "semisup");
    WindowDataset ds = resolve_dataset(cfg);
    print_warnings(ds);
    Checkpoint ckpt = load_checkpoint(checkpoint);
    TrainResult result =
        semi_supervised(ds, cfg.semisup_budget, ckpt, cfg.recipe, cfg.seed, cfg.semisup_full_finetune);
    write_json(dir + "/report.json", result.test_report.to_json());
    write_text(dir + "/confusion_test.csv", result.test_report.confusion_csv());
    require_artifacts({dir + "/config.json", dir + "/report.json"});
    std::cout << "budget " << cfg.semisup_budget << ": test video accuracy " << result.test_report.video_accuracy
              << "\n";
    return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& checkpoint, const std::string& split) {
    ExperimentConfig cfg = load_config(args);
    const std::string dir = prepare_run_dir(cfg, "eval");
    WindowDataset ds = resolve_dataset(cfg);
    print_warnings(ds);
    Checkpoint ckpt = load_checkpoint(checkpoint);
    if (!ckpt.has("classifier")) throw CheckpointError("eval: checkpoint has no classifier section");
    SupervisedModel model = model_from_checkpoint(ckpt);
    const auto& windows = split == "train" ? ds.train : ds.test;
    EvalReport report = evaluate(model, windows, ds.num_classes());
    write_json(dir + "/report.json", report.to_json());
    write_text(dir + "/confusion.csv", report.confusion_csv());
    require_artifacts({dir + "/config.json", dir + "/report.json", dir + "/confusion.csv"});
    std::cout << split << " window accuracy " << report.window_accuracy << ", video accuracy "
              << report.video_accuracy << "\n";
    return 0;
}

int cmd_sweep(const CommonArgs& args) {
    ExperimentConfig cfg = load_config(args);
    if (!cfg.synth) throw ConfigError("dataset.synth: the sweep command generates one dataset per grid point");
    const std::string dir = prepare_run_dir(cfg, "sweep");
    std::ostringstream csv;
    csv << "seq_len,joints,joint_mode,test_video_accuracy,test_window_accuracy\n";
    for (int T : cfg.sweep.seq_lens) {
        SynthSpec spec = *cfg.synth;
        spec.seq_len = T;
        spec.video_len = 0; // track T
        const std::string cell_dir = (fs::path(cfg.synth_dir) / ("sweep_T" + std::to_string(T))).string();
        if (!fs::exists(fs::path(cell_dir) / "manifest.json")) synth_dataset(spec, cell_dir);
        ExperimentManifest manifest = ExperimentManifest::load((fs::path(cell_dir) / "manifest.json").string());
        for (const auto& mode : cfg.sweep.joint_modes) {
            ExperimentManifest m = manifest;
            m.joint_map_id = mode == "raw25" ? "raw25" : "default15";
            WindowDataset ds = load_dataset(m);
            EncoderConfig enc = cfg.encoder;
            enc.seq_len = T;
            enc.joints = ds.selected_joints;
            ByolConfig byol_cfg = cfg.byol;
            byol_cfg.epochs = cfg.sweep.byol_epochs;
            auto pre = pretrain(ds, enc, cfg.heads, byol_cfg, cfg.augment, cfg.seed);
            TrainRecipe recipe = cfg.recipe;
            recipe.mode = RecipeMode::FullFinetune;
            recipe.epochs = cfg.sweep.finetune_epochs;
            TrainResult ft = finetune(ds, recipe, encoder_checkpoint(pre.state), cfg.seed);
            csv << T << "," << ds.selected_joints << "," << mode << "," << ft.test_report.video_accuracy << ","
                << ft.test_report.window_accuracy << "\n";
            std::cout << "T=" << T << " mode=" << mode << " test video accuracy "
                      << ft.test_report.video_accuracy << "\n";
        }
    }
    write_text(dir + "/sweep.csv", csv.str());
    require_artifacts({dir + "/config.json", dir + "/sweep.csv"});
    std::cout << "sweep table: " << dir << "/sweep.csv\n";
    return 0;
}

int cmd_inspect(const CommonArgs& args, int classes) {
    ExperimentConfig cfg = load_config(args);
    const int64_t params = count_params(cfg.encoder, classes);
    const double flops = estimate_flops(cfg.encoder, classes);
    std::cout << "encoder config: F=" << cfg.encoder.conv_filters << " K=" << cfg.encoder.kernel_size
              << " L=" << cfg.encoder.layers << " H=" << cfg.encoder.heads << " D=" << cfg.encoder.d_model
              << " T=" << cfg.encoder.seq_len << " J=" << cfg.encoder.joints << "\n";
    std::cout << "params: " << params << " (" << static_cast<double>(params) / 1e6 << "M)\n";
    std::cout << "flops per window: " << flops << " (" << flops / 1e9 << "G)\n";
    std::cout << "transformer tokens: " << cfg.encoder.tokens() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"ReL-SAR: skeleton action recognition with a convolutional transformer and BYOL"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string checkpoint, mode, split = "test";
    std::optional<int> budget;
    int inspect_classes = 0;

    auto* synth = app.add_subcommand("synth", "generate the synthetic dataset");
    add_common(synth, args);
    auto* ingest = app.add_subcommand("ingest", "load and validate a dataset, print stats");
    add_common(ingest, args);
    auto* pre = app.add_subcommand("pretrain", "BYOL pre-training on the train split (labels ignored)");
    add_common(pre, args, true);
    auto* train = app.add_subcommand("train", "fully supervised baseline");
    add_common(train, args, true);
    auto* fine = app.add_subcommand("finetune", "fine-tune from a BYOL encoder checkpoint");
    add_common(fine, args, true);
    fine->add_option("--checkpoint", checkpoint, "encoder checkpoint")->required();
    fine->add_option("--mode", mode, "full_finetune | freeze_conv1 | freeze_conv2 | linear_only");
    auto* semi = app.add_subcommand("semisup", "semi-supervised probe with a per-class video budget");
    add_common(semi, args, true);
    semi->add_option("--checkpoint", checkpoint, "encoder checkpoint")->required();
    semi->add_option("--budget", budget, "labeled videos per class");
    auto* ev = app.add_subcommand("eval", "evaluate a trained model checkpoint");
    add_common(ev, args);
    ev->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    ev->add_option("--split", split, "train | test");
    auto* sweep = app.add_subcommand("sweep", "T x joint-mode accuracy grid, emits CSV");
    add_common(sweep, args);
    auto* inspect = app.add_subcommand("inspect", "print parameter count and flops estimate");
    add_common(inspect, args);
    inspect->add_option("--classes", inspect_classes, "include a classifier head of this many classes");

    CLI11_PARSE(app, argc, argv);

    try {
        if (synth->parsed()) return cmd_synth(args);
        if (ingest->parsed()) return cmd_ingest(args);
        if (pre->parsed()) return cmd_pretrain(args);
        if (train->parsed()) return cmd_train(args);
        if (fine->parsed()) return cmd_finetune(args, checkpoint, mode);
        if (semi->parsed()) return cmd_semisup(args, checkpoint, budget);
        if (ev->parsed()) return cmd_eval(args, checkpoint, split);
        if (sweep->parsed()) return cmd_sweep(args);
        if (inspect->parsed()) return cmd_inspect(args, inspect_classes);
    } catch (const TrainingError& e) {
        std::cerr << "training error: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const ManifestError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const CheckpointError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
