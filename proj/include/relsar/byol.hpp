// BYOL pre-training: online network (encoder + projector + predictor,
// weights theta) chases an exponential-moving-average target network
// (encoder + projector, weights xi) across two augmented views. Gradients
// flow only into theta; xi changes only through the EMA update.
#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "relsar/augment.hpp"
#include "relsar/checkpoint.hpp"
#include "relsar/data.hpp"
#include "relsar/model.hpp"
#include "relsar/optim.hpp"

namespace relsar {

struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ByolConfig {
    int epochs = 100;
    int batch_size = 64;
    double lr = 1e-2;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int decay_steps = 1000;
    double tau = 0.99;

    void validate() const {
        if (epochs < 1) throw ConfigError("byol.epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("byol.batch_size must be >= 1");
        if (lr <= 0.0) throw ConfigError("byol.lr must be positive");
        if (tau < 0.0 || tau > 1.0) throw ConfigError("byol.tau outside [0,1]");
        if (decay_steps < 1) throw ConfigError("byol.decay_steps must be >= 1");
    }
};

struct ByolState {
    EncoderConfig encoder_cfg;
    HeadConfig head_cfg;
    ParamSet online_encoder, online_projector, online_predictor;
    ParamSet target_encoder, target_projector;
    double tau = 0.99;
    int64_t step = 0;
};

ByolState init_byol_state(const EncoderConfig& enc, const HeadConfig& heads, double tau, Rng& rng);

// Elementwise xi <- tau * xi + (1 - tau) * theta over both trainable tensors
// and running-stat buffers.
void ema_update(const ParamSet& online, ParamSet& target, double tau);

// Per-sample normalized-MSE term 2 - 2 <q, z> / (|q| |z|), computed for a
// single vector pair. Used directly by tests; training uses the batched
// graph composition below.
double byol_loss_term(const std::vector<double>& q, const std::vector<double>& z);

// Mean per-dimension standard deviation of L2-normalized embeddings; values
// near zero indicate representational collapse.
double collapse_metric(const Tensor& embeddings);

// Graph composition of the symmetric loss over two view batches. Returns the
// scalar loss Var; y_online_out (optional) receives the online representation
// of the first view for collapse diagnostics.
template <typename S>
struct ByolGraphParams {
    BoundParamsT<S> online_encoder, online_projector, online_predictor;
    BoundParamsT<S> target_encoder, target_projector;
};

template <typename S>
typename GraphT<S>::Var byol_term_batch(GraphT<S>& g, typename GraphT<S>::Var q,
                                        typename GraphT<S>::Var z_stopped) {
    auto qn = g.l2_normalize_last(q);
    auto zn = g.l2_normalize_last(z_stopped);
    auto dot = g.sum_last(g.mul(qn, zn));
    return g.add_scalar(g.scale(dot, S(-2)), S(2)); // [B], each in [0, 4]
}

template <typename S>
typename GraphT<S>::Var symmetric_byol_loss(GraphT<S>& g, const ByolGraphParams<S>& p, const EncoderConfig& cfg,
                                            HeadActivation act, typename GraphT<S>::Var x_i,
                                            typename GraphT<S>::Var x_j, Rng* dropout_rng = nullptr,
                                            typename GraphT<S>::Var* y_online_out = nullptr) {
    using Var = typename GraphT<S>::Var;
    auto online = [&](Var x, Var* y_out) {
        EncodeOptions opt;
        opt.mode = ForwardMode::Train;
        opt.dropout_rng = dropout_rng;
        opt.update_running_stats = true;
        Var y = encode(g, p.online_encoder, cfg, x, opt);
        if (y_out) *y_out = y;
        Var z = mlp_head(g, p.online_projector, "head", act, y, ForwardMode::Train, true);
        return mlp_head(g, p.online_predictor, "head", act, z, ForwardMode::Train, true);
    };
    auto target = [&](Var x) {
        EncodeOptions opt;
        opt.mode = ForwardMode::Train; // batch statistics, no dropout
        opt.dropout_rng = nullptr;
        opt.update_running_stats = false;
        Var y = encode(g, p.target_encoder, cfg, x, opt);
        Var z = mlp_head(g, p.target_projector, "head", act, y, ForwardMode::Train, false);
        return g.stop_gradient(z);
    };
    Var term_a = byol_term_batch(g, online(x_i, y_online_out), target(x_j));
    Var term_b = byol_term_batch(g, online(x_j, nullptr), target(x_i));
    return g.mean(g.add(term_a, term_b));
}

// One momentum buffer per online component; the projector and predictor
// share tensor names, so they cannot share an optimizer state map.
struct ByolOptimizer {
    SgdMomentum encoder;
    SgdMomentum projector;
    SgdMomentum predictor;

    ByolOptimizer(double momentum, double weight_decay)
        : encoder(momentum, weight_decay), projector(momentum, weight_decay), predictor(momentum, weight_decay) {}
};

// One optimizer step over a batch of windows. Exposed for tests; pretrain()
// drives it across epochs.
struct ByolStepResult {
    double loss = 0.0;
    double collapse = 0.0;
};

ByolStepResult byol_step(ByolState& state, ByolOptimizer& opt, const std::vector<const SkeletonSequence*>& batch,
                         const AugmentConfig& aug, double lr, Rng& rng);

struct PretrainResult {
    ByolState state;
    std::vector<double> epoch_mean_loss;
    double final_collapse = 0.0;
    ByolOptimizer optimizer{0.9, 1e-4};
};

// Full pre-training loop over the manifest's train split (labels ignored).
// Writes a JSON-lines log when log_path is non-empty; on a non-finite loss,
// writes a diagnostics file next to it and throws TrainingError.
PretrainResult pretrain(const WindowDataset& data, const EncoderConfig& enc, const HeadConfig& heads,
                        const ByolConfig& cfg, const AugmentConfig& aug, uint64_t seed,
                        const std::string& log_path = "",
                        const std::function<void(int, double)>& on_epoch = nullptr);

// Checkpoint assembly for the two artifacts pretrain emits.
Checkpoint full_checkpoint(const ByolState& state, const ByolOptimizer& opt);
Checkpoint encoder_checkpoint(const ByolState& state);

} // namespace relsar
