#include "relsar/supervised.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

using nlohmann::json;

namespace relsar {

RecipeMode recipe_mode_from_string(const std::string& s) {
    if (s == "baseline") return RecipeMode::Baseline;
    if (s == "full_finetune") return RecipeMode::FullFinetune;
    if (s == "freeze_conv1") return RecipeMode::FreezeConv1;
    if (s == "freeze_conv2") return RecipeMode::FreezeConv2;
    if (s == "linear_only") return RecipeMode::LinearOnly;
    throw ConfigError("recipe.mode: unknown value '" + s + "'");
}

std::string to_string(RecipeMode m) {
    switch (m) {
        case RecipeMode::Baseline: return "baseline";
        case RecipeMode::FullFinetune: return "full_finetune";
        case RecipeMode::FreezeConv1: return "freeze_conv1";
        case RecipeMode::FreezeConv2: return "freeze_conv2";
        case RecipeMode::LinearOnly: return "linear_only";
    }
    return "baseline";
}

void TrainRecipe::validate() const {
    if (epochs < 0) throw ConfigError("recipe.epochs must be non-negative");
    if (batch_size < 1) throw ConfigError("recipe.batch_size must be >= 1");
    if (peak_lr <= 0.0 || final_lr < 0.0) throw ConfigError("recipe learning rates must be positive");
    if (warmup_frac < 0.0 || warmup_frac > 1.0 || drop_frac < 0.0 || drop_frac > 1.0)
        throw ConfigError("recipe schedule fractions outside [0,1]");
    if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("recipe.label_smoothing outside [0,1)");
    if (weight_decay < 0.0) throw ConfigError("recipe.weight_decay must be non-negative");
}

double TrainRecipe::lr_at_epoch(int epoch) const {
    const int warmup = static_cast<int>(std::lround(warmup_frac * epochs));
    const int drop = static_cast<int>(std::lround(drop_frac * epochs));
    if (epoch < warmup) return peak_lr * static_cast<double>(epoch + 1) / static_cast<double>(warmup);
    if (epoch < drop || drop <= warmup) return peak_lr;
    return final_lr;
}

std::vector<float> smoothed_targets(int label, int num_classes, double smoothing) {
    if (label < 0 || label >= num_classes) throw ConfigError("label outside class range");
    std::vector<float> t(static_cast<size_t>(num_classes), static_cast<float>(smoothing / num_classes));
    t[static_cast<size_t>(label)] += static_cast<float>(1.0 - smoothing);
    return t;
}

json EvalReport::to_json() const {
    json j;
    j["window_accuracy"] = window_accuracy;
    j["video_accuracy"] = video_accuracy;
    j["confusion"] = confusion;
    j["windows"] = windows;
    j["videos"] = videos;
    j["params"] = params;
    j["runtime_seconds"] = runtime_seconds;
    return j;
}

std::string EvalReport::confusion_csv() const {
    std::ostringstream os;
    os << "true\\pred";
    for (size_t c = 0; c < confusion.size(); ++c) os << ",class" << c;
    os << "\n";
    for (size_t r = 0; r < confusion.size(); ++r) {
        os << "class" << r;
        for (size_t c = 0; c < confusion[r].size(); ++c) os << "," << confusion[r][c];
        os << "\n";
    }
    return os.str();
}

namespace {

struct FrozenSpec {
    std::set<std::string> names; // encoder tensors excluded from updates
    bool conv1_stats = false;
    bool conv2_stats = false;
    bool whole_encoder = false;
};

FrozenSpec frozen_for(RecipeMode mode) {
    FrozenSpec f;
    auto block = [&](const std::string& p) {
        f.names.insert(p + ".w");
        f.names.insert(p + ".b");
        f.names.insert(p + ".bn.gamma");
        f.names.insert(p + ".bn.beta");
    };
    switch (mode) {
        case RecipeMode::Baseline:
        case RecipeMode::FullFinetune: break;
        case RecipeMode::FreezeConv1:
            block("conv1");
            f.conv1_stats = true;
            break;
        case RecipeMode::FreezeConv2:
            block("conv2");
            f.conv2_stats = true;
            break;
        case RecipeMode::LinearOnly: f.whole_encoder = true; break;
    }
    return f;
}

std::vector<const SkeletonSequence*> pointers(const std::vector<SkeletonSequence>& v) {
    std::vector<const SkeletonSequence*> p;
    p.reserve(v.size());
    for (const auto& s : v) p.push_back(&s);
    return p;
}

// Eval-mode features for a window list; valid whenever the encoder is frozen.
Tensor frozen_features(const EncoderConfig& cfg, ParamSet& encoder,
                       const std::vector<const SkeletonSequence*>& windows, int batch_size = 256) {
    Tensor out(Shape{static_cast<int64_t>(windows.size()), cfg.d_model});
    for (size_t start = 0; start < windows.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(windows.size(), start + static_cast<size_t>(batch_size));
        std::vector<const SkeletonSequence*> chunk(windows.begin() + static_cast<int64_t>(start),
                                                   windows.begin() + static_cast<int64_t>(end));
        Graph g;
        auto bound = bind(g, encoder);
        EncodeOptions opt; // eval: running stats, no dropout
        auto y = encode(g, bound, cfg, g.constant(batch_tensor(chunk)), opt);
        const Tensor& yv = g.value(y);
        std::copy(yv.data.begin(), yv.data.end(),
                  out.data.begin() + static_cast<int64_t>(start) * cfg.d_model);
    }
    return out;
}

Graph::Var ce_loss(Graph& g, Graph::Var logits, const std::vector<int>& labels, int num_classes,
                   double smoothing) {
    const int64_t B = g.value(logits).shape[0];
    Tensor targets(Shape{B, num_classes});
    for (int64_t b = 0; b < B; ++b) {
        auto row = smoothed_targets(labels[static_cast<size_t>(b)], num_classes, smoothing);
        std::copy(row.begin(), row.end(), targets.data.begin() + b * num_classes);
    }
    auto ls = g.log_softmax_last(logits);
    auto picked = g.sum_last(g.mul(ls, g.constant(std::move(targets))));
    return g.scale(g.mean(picked), -1.0f);
}

// Train the classifier head on fixed features (frozen encoder fast path).
std::vector<double> train_probe(const Tensor& features, const std::vector<int>& labels, ParamSet& classifier,
                                int num_classes, const TrainRecipe& recipe, Rng& rng) {
    const int64_t N = features.shape[0];
    const int64_t D = features.shape[1];
    AdamW opt(0.9, 0.999, recipe.weight_decay);
    std::vector<size_t> order(static_cast<size_t>(N));
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::vector<double> epoch_loss;
    for (int epoch = 0; epoch < recipe.epochs; ++epoch) {
        rng.shuffle(order);
        const double lr = recipe.lr_at_epoch(epoch);
        double total = 0.0;
        int batches = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(recipe.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(recipe.batch_size));
            const int64_t B = static_cast<int64_t>(end - start);
            Tensor xb(Shape{B, D});
            std::vector<int> yb(static_cast<size_t>(B));
            for (size_t i = start; i < end; ++i) {
                std::copy(features.data.begin() + static_cast<int64_t>(order[i]) * D,
                          features.data.begin() + static_cast<int64_t>(order[i] + 1) * D,
                          xb.data.begin() + static_cast<int64_t>(i - start) * D);
                yb[i - start] = labels[order[i]];
            }
            Graph g;
            auto bound = bind(g, classifier);
            auto logits = classify(g, bound, g.constant(std::move(xb)));
            auto loss = ce_loss(g, logits, yb, num_classes, recipe.label_smoothing);
            const double lv = g.value(loss)(0);
            if (!std::isfinite(lv)) throw TrainingError("probe: non-finite loss");
            g.backward(loss);
            opt.step(classifier, collect_grads(g, bound), lr);
            total += lv;
            ++batches;
        }
        epoch_loss.push_back(total / std::max(1, batches));
    }
    return epoch_loss;
}

// Full training loop through the encoder.
std::vector<double> train_full(const WindowDataset& data, SupervisedModel& model, const TrainRecipe& recipe,
                               const FrozenSpec& frozen, Rng& rng) {
    const int num_classes = data.num_classes();
    std::vector<size_t> order(data.train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    AdamW enc_opt(0.9, 0.999, recipe.weight_decay);
    AdamW cls_opt(0.9, 0.999, recipe.weight_decay);
    std::vector<double> epoch_loss;
    for (int epoch = 0; epoch < recipe.epochs; ++epoch) {
        rng.shuffle(order);
        const double lr = recipe.lr_at_epoch(epoch);
        double total = 0.0;
        int batches = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(recipe.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(recipe.batch_size));
            std::vector<const SkeletonSequence*> batch;
            std::vector<int> labels;
            for (size_t i = start; i < end; ++i) {
                batch.push_back(&data.train[order[i]]);
                labels.push_back(data.train[order[i]].label);
            }
            Graph g;
            auto enc_bound = bind(g, model.encoder);
            auto cls_bound = bind(g, model.classifier);
            EncodeOptions opt;
            opt.mode = ForwardMode::Train;
            opt.dropout_rng = &rng;
            opt.conv1_frozen_stats = frozen.conv1_stats;
            opt.conv2_frozen_stats = frozen.conv2_stats;
            auto y = encode(g, enc_bound, model.encoder_cfg, g.constant(batch_tensor(batch)), opt);
            auto logits = classify(g, cls_bound, y);
            auto loss = ce_loss(g, logits, labels, num_classes, recipe.label_smoothing);
            const double lv = g.value(loss)(0);
            if (!std::isfinite(lv)) throw TrainingError("supervised: non-finite loss at epoch " + std::to_string(epoch));
            g.backward(loss);
            enc_opt.step(model.encoder, collect_grads(g, enc_bound), lr, &frozen.names);
            cls_opt.step(model.classifier, collect_grads(g, cls_bound), lr);
            total += lv;
            ++batches;
        }
        epoch_loss.push_back(total / std::max(1, batches));
    }
    return epoch_loss;
}

// Linear-only path shared by finetune(LinearOnly) and semi_supervised.
std::vector<double> train_linear_probe(const WindowDataset& data, SupervisedModel& model,
                                       const std::vector<const SkeletonSequence*>& train_windows,
                                       const TrainRecipe& recipe, Rng& rng) {
    Tensor features = frozen_features(model.encoder_cfg, model.encoder, train_windows);
    std::vector<int> labels;
    labels.reserve(train_windows.size());
    for (const auto* w : train_windows) labels.push_back(w->label);
    return train_probe(features, labels, model.classifier, data.num_classes(), recipe, rng);
}

} // namespace

std::vector<std::vector<double>> predict_probs(const SupervisedModel& model,
                                               const std::vector<const SkeletonSequence*>& windows,
                                               int batch_size) {
    std::vector<std::vector<double>> probs;
    probs.reserve(windows.size());
    ParamSet encoder = model.encoder; // eval is side-effect free on the caller's params
    ParamSet classifier = model.classifier;
    for (size_t start = 0; start < windows.size(); start += static_cast<size_t>(batch_size)) {
        const size_t end = std::min(windows.size(), start + static_cast<size_t>(batch_size));
        std::vector<const SkeletonSequence*> chunk(windows.begin() + static_cast<int64_t>(start),
                                                   windows.begin() + static_cast<int64_t>(end));
        Graph g;
        auto enc_bound = bind(g, encoder);
        auto cls_bound = bind(g, classifier);
        EncodeOptions opt; // eval mode
        auto y = encode(g, enc_bound, model.encoder_cfg, g.constant(batch_tensor(chunk)), opt);
        auto p = g.softmax_last(classify(g, cls_bound, y));
        const Tensor& pv = g.value(p);
        for (int64_t b = 0; b < pv.shape[0]; ++b) {
            std::vector<double> row(static_cast<size_t>(pv.shape[1]));
            for (int64_t c = 0; c < pv.shape[1]; ++c) row[static_cast<size_t>(c)] = pv(b, c);
            probs.push_back(std::move(row));
        }
    }
    return probs;
}

EvalReport evaluate(const SupervisedModel& model, const std::vector<SkeletonSequence>& split, int num_classes) {
    if (split.empty()) throw ConfigError("evaluate: split is empty");
    const auto t0 = std::chrono::steady_clock::now();
    auto windows = pointers(split);
    auto probs = predict_probs(model, windows);

    EvalReport rep;
    rep.windows = static_cast<int64_t>(split.size());
    rep.params = model.param_count();
    rep.confusion.assign(static_cast<size_t>(num_classes), std::vector<int64_t>(static_cast<size_t>(num_classes), 0));

    int64_t window_hits = 0;
    // Group windows by source video, preserving first-seen order.
    std::vector<std::string> video_order;
    std::map<std::string, std::vector<size_t>> by_video;
    for (size_t i = 0; i < split.size(); ++i) {
        if (!by_video.count(split[i].source_id)) video_order.push_back(split[i].source_id);
        by_video[split[i].source_id].push_back(i);
    }
    for (size_t i = 0; i < split.size(); ++i) {
        int pred = 0;
        for (int c = 1; c < num_classes; ++c)
            if (probs[i][static_cast<size_t>(c)] > probs[i][static_cast<size_t>(pred)]) pred = c;
        if (pred == split[i].label) ++window_hits;
    }
    int64_t video_hits = 0;
    for (const auto& vid : video_order) {
        const auto& idxs = by_video[vid];
        std::vector<int> votes(static_cast<size_t>(num_classes), 0);
        std::vector<double> mean_prob(static_cast<size_t>(num_classes), 0.0);
        for (size_t i : idxs) {
            int pred = 0;
            for (int c = 1; c < num_classes; ++c)
                if (probs[i][static_cast<size_t>(c)] > probs[i][static_cast<size_t>(pred)]) pred = c;
            ++votes[static_cast<size_t>(pred)];
            for (int c = 0; c < num_classes; ++c) mean_prob[static_cast<size_t>(c)] += probs[i][static_cast<size_t>(c)];
        }
        for (auto& p : mean_prob) p /= static_cast<double>(idxs.size());
        const int max_votes = *std::max_element(votes.begin(), votes.end());
        int label = -1;
        double best_prob = -1.0;
        for (int c = 0; c < num_classes; ++c)
            if (votes[static_cast<size_t>(c)] == max_votes && mean_prob[static_cast<size_t>(c)] > best_prob) {
                best_prob = mean_prob[static_cast<size_t>(c)];
                label = c;
            }
        const int truth = split[by_video[vid].front()].label;
        ++rep.confusion[static_cast<size_t>(truth)][static_cast<size_t>(label)];
        if (label == truth) ++video_hits;
    }
    rep.videos = static_cast<int64_t>(video_order.size());
    rep.window_accuracy = static_cast<double>(window_hits) / static_cast<double>(rep.windows);
    rep.video_accuracy = static_cast<double>(video_hits) / static_cast<double>(rep.videos);
    rep.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

TrainResult train_supervised(const WindowDataset& data, const EncoderConfig& enc, const TrainRecipe& recipe,
                             uint64_t seed) {
    recipe.validate();
    enc.validate();
    if (recipe.mode != RecipeMode::Baseline)
        throw ConfigError("train_supervised: recipe mode must be 'baseline' (use finetune for checkpoint init)");
    if (data.train.empty()) throw ConfigError("train_supervised: train split is empty");
    Rng rng(seed);
    TrainResult out;
    out.model.encoder_cfg = enc;
    out.model.encoder = init_encoder_params(enc, rng);
    out.model.classifier = init_classifier_params(enc.d_model, data.num_classes(), rng);
    out.epoch_loss = train_full(data, out.model, recipe, FrozenSpec{}, rng);
    out.train_report = evaluate(out.model, data.train, data.num_classes());
    if (!data.test.empty()) out.test_report = evaluate(out.model, data.test, data.num_classes());
    return out;
}

TrainResult finetune(const WindowDataset& data, const TrainRecipe& recipe, const Checkpoint& encoder_ckpt,
                     uint64_t seed) {
    recipe.validate();
    if (recipe.mode == RecipeMode::Baseline)
        throw ConfigError("finetune: recipe mode must name a fine-tuning protocol");
    if (data.train.empty()) throw ConfigError("finetune: train split is empty");
    const EncoderConfig enc = encoder_ckpt.encoder;
    if (enc.seq_len != data.manifest.seq_len || enc.joints != data.selected_joints)
        throw CheckpointError("finetune: checkpoint config does not match dataset (T=" +
                              std::to_string(enc.seq_len) + ", J=" + std::to_string(enc.joints) + ")");
    Rng rng(seed);
    TrainResult out;
    out.model.encoder_cfg = enc;
    out.model.encoder = encoder_ckpt.section("encoder");
    out.model.classifier = init_classifier_params(enc.d_model, data.num_classes(), rng);
    const FrozenSpec frozen = frozen_for(recipe.mode);
    if (recipe.mode == RecipeMode::LinearOnly) {
        out.epoch_loss = train_linear_probe(data, out.model, pointers(data.train), recipe, rng);
    } else {
        out.epoch_loss = train_full(data, out.model, recipe, frozen, rng);
    }
    out.train_report = evaluate(out.model, data.train, data.num_classes());
    if (!data.test.empty()) out.test_report = evaluate(out.model, data.test, data.num_classes());
    return out;
}

std::vector<std::string> sample_video_budget(const WindowDataset& data, int videos_per_class, uint64_t seed) {
    if (videos_per_class < 1) throw ConfigError("semi_supervised: budget must be >= 1");
    std::map<int, std::vector<std::string>> per_class;
    std::set<std::string> seen;
    for (const auto& w : data.train)
        if (seen.insert(w.source_id).second) per_class[w.label].push_back(w.source_id);
    std::vector<std::string> picked;
    Rng rng(seed);
    for (int c = 0; c < data.num_classes(); ++c) {
        auto it = per_class.find(c);
        const int have = it == per_class.end() ? 0 : static_cast<int>(it->second.size());
        if (have < videos_per_class)
            throw ConfigError("semi_supervised: budget " + std::to_string(videos_per_class) + " exceeds the " +
                              std::to_string(have) + " train videos of class " + std::to_string(c));
        auto& vids = it->second;
        std::sort(vids.begin(), vids.end());
        rng.shuffle(vids);
        picked.insert(picked.end(), vids.begin(), vids.begin() + videos_per_class);
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

TrainResult semi_supervised(const WindowDataset& data, int videos_per_class, const Checkpoint& encoder_ckpt,
                            const TrainRecipe& recipe, uint64_t seed, bool full_finetune) {
    recipe.validate();
    auto picked = sample_video_budget(data, videos_per_class, seed);
    std::set<std::string> chosen(picked.begin(), picked.end());
    WindowDataset subset = data;
    subset.train.clear();
    for (const auto& w : data.train)
        if (chosen.count(w.source_id)) subset.train.push_back(w);

    TrainRecipe r = recipe;
    r.mode = full_finetune ? RecipeMode::FullFinetune : RecipeMode::LinearOnly;
    return finetune(subset, r, encoder_ckpt, seed);
}

} // namespace relsar
