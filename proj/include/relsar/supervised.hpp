// Supervised training on top of the encoder: the fully supervised baseline,
// fine-tuning from a BYOL checkpoint with layer-freezing protocols, the
// labeled-budget semi-supervised protocol, and evaluation with per-video
// majority voting.
#pragma once

#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "relsar/byol.hpp"
#include "relsar/checkpoint.hpp"
#include "relsar/data.hpp"
#include "relsar/model.hpp"

namespace relsar {

enum class RecipeMode { Baseline, FullFinetune, FreezeConv1, FreezeConv2, LinearOnly };

RecipeMode recipe_mode_from_string(const std::string& s);
std::string to_string(RecipeMode m);

struct TrainRecipe {
    RecipeMode mode = RecipeMode::Baseline;
    int epochs = 500;
    int batch_size = 128;
    double peak_lr = 1e-3;  // warmup target; the paper states only the post-drop rate
    double final_lr = 1e-4; // step-drop value
    double warmup_frac = 0.4;
    double drop_frac = 0.8;
    double weight_decay = 1e-4;
    double label_smoothing = 0.1;

    void validate() const;
    // Per-epoch rate: linear warmup to peak, flat, then step drop.
    double lr_at_epoch(int epoch) const;
};

struct EvalReport {
    double window_accuracy = 0.0;
    double video_accuracy = 0.0;
    std::vector<std::vector<int64_t>> confusion; // video level, [true][predicted]
    int64_t windows = 0;
    int64_t videos = 0;
    int64_t params = 0;
    double runtime_seconds = 0.0;

    nlohmann::json to_json() const;
    std::string confusion_csv() const;
};

struct SupervisedModel {
    EncoderConfig encoder_cfg;
    ParamSet encoder;
    ParamSet classifier;

    int64_t param_count() const { return encoder.scalar_count() + classifier.scalar_count(); }
};

// Class probabilities for a set of windows (eval mode, batched internally).
std::vector<std::vector<double>> predict_probs(const SupervisedModel& model,
                                               const std::vector<const SkeletonSequence*>& windows,
                                               int batch_size = 256);

EvalReport evaluate(const SupervisedModel& model, const std::vector<SkeletonSequence>& split, int num_classes);

// Label-smoothed target row for one class.
std::vector<float> smoothed_targets(int label, int num_classes, double smoothing);

struct TrainResult {
    SupervisedModel model;
    std::vector<double> epoch_loss;
    EvalReport train_report;
    EvalReport test_report;
};

// Supervised baseline: random init, AdamW, warmup + step-drop schedule,
// label-smoothed cross-entropy.
TrainResult train_supervised(const WindowDataset& data, const EncoderConfig& enc, const TrainRecipe& recipe,
                             uint64_t seed);

// Fine-tune from a BYOL encoder checkpoint under the recipe's freezing mode.
// FreezeConv1/FreezeConv2 keep the named conv block (weights, batchnorm
// affine and running statistics) bitwise immutable; LinearOnly trains the
// classifier alone on the frozen encoder.
TrainResult finetune(const WindowDataset& data, const TrainRecipe& recipe, const Checkpoint& encoder_ckpt,
                     uint64_t seed);

// Uniformly sample `videos_per_class` train videos per class (seeded).
std::vector<std::string> sample_video_budget(const WindowDataset& data, int videos_per_class, uint64_t seed);

// Semi-supervised protocol: linear classifier on the frozen BYOL encoder,
// trained on the sampled budget, evaluated on the full test split. Set
// full_finetune to update the encoder as well.
TrainResult semi_supervised(const WindowDataset& data, int videos_per_class, const Checkpoint& encoder_ckpt,
                            const TrainRecipe& recipe, uint64_t seed, bool full_finetune = false);

} // namespace relsar
