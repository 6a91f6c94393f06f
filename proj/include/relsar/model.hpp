// The ReL-SAR convolutional-transformer encoder and its heads.
//
// Input is a skeleton window of T frames, each frame's J joints flattened to
// a 2*J channel vector (the joint ordering keeps anatomically adjacent
// joints in adjacent channels). Two Conv1D blocks (conv -> SeLU -> batchnorm
// -> maxpool) halve the temporal axis twice, a linear projection maps the
// result to d_model, a learnable class token is prepended, positional
// embeddings are added, and L post-norm transformer layers follow. The class
// token's final state is the sequence representation.
#pragma once

#include <cmath>
#include <string>

#include "relsar/graph.hpp"
#include "relsar/params.hpp"
#include "relsar/rng.hpp"

namespace relsar {

struct EncoderConfig {
    int conv_filters = 192; // F
    int kernel_size = 3;    // K
    int layers = 6;         // L
    int heads = 3;          // H
    int d_model = 192;
    float dropout_rate = 0.1f;
    int seq_len = 30; // T
    int joints = 15;  // J after selection-permutation

    int d_mlp() const { return 4 * d_model; }
    int d_head() const { return d_model / heads; }
    int in_channels() const { return 2 * joints; }
    // Two maxpool(2,2) stages over time.
    int conv_out_len() const { return (seq_len / 2) / 2; }
    int tokens() const { return conv_out_len() + 1; }

    void validate() const;
};

enum class HeadActivation { Gelu, Selu, Identity };

struct HeadConfig {
    int proj_hidden = 512; // h_proj
    int proj_dim = 128;    // d_proj
    HeadActivation activation = HeadActivation::Gelu;

    void validate() const;
};

HeadActivation head_activation_from_string(const std::string& s);
std::string to_string(HeadActivation a);

// ---- parameter construction -------------------------------------------------

ParamSet init_encoder_params(const EncoderConfig& cfg, Rng& rng);
ParamSet init_projector_params(int in_dim, const HeadConfig& heads, Rng& rng);
ParamSet init_predictor_params(const HeadConfig& heads, Rng& rng);
ParamSet init_classifier_params(int in_dim, int num_classes, Rng& rng);

// Analytic trainable-scalar count of the encoder plus an optional linear
// classifier (num_classes == 0 omits it). Cross-checked in tests against the
// allocated parameter sets.
int64_t count_params(const EncoderConfig& cfg, int num_classes = 0);

// Analytic floating-point operation estimate for one forward pass of the
// encoder (plus optional classifier) on a single window: multiply-accumulate
// count times two.
double estimate_flops(const EncoderConfig& cfg, int num_classes = 0);

// ---- forward passes ----------------------------------------------------------

// The conv stage and the full encoder are templated on the scalar type so the
// gradient-check suite can run them in 64-bit precision.
template <typename S>
typename GraphT<S>::Var conv_stage(GraphT<S>& g, const BoundParamsT<S>& p, const EncoderConfig& cfg,
                                   typename GraphT<S>::Var x, ForwardMode mode, bool update_running,
                                   bool block1_frozen_stats = false, bool block2_frozen_stats = false) {
    using Var = typename GraphT<S>::Var;
    const bool training = mode == ForwardMode::Train;
    auto block = [&](Var in, const std::string& prefix, bool frozen_stats) {
        Var c = g.conv1d(in, p[prefix + ".w"], p[prefix + ".b"]);
        c = g.selu(c);
        BnStatsT<S> stats = p.bn_stats(prefix + ".bn");
        const bool bn_training = training && !frozen_stats;
        Var n = g.batchnorm(c, p[prefix + ".bn.gamma"], p[prefix + ".bn.beta"], &stats, bn_training,
                            /*update_running=*/update_running && bn_training);
        if (update_running && bn_training) p.store_bn_stats(prefix + ".bn", stats);
        return g.maxpool1d(n, 2, 2);
    };
    Var h = block(x, "conv1", block1_frozen_stats);
    return block(h, "conv2", block2_frozen_stats);
}

template <typename S>
typename GraphT<S>::Var attention_layer(GraphT<S>& g, const BoundParamsT<S>& p, const EncoderConfig& cfg,
                                        typename GraphT<S>::Var tokens, int layer, ForwardMode mode, Rng* rng) {
    using Var = typename GraphT<S>::Var;
    const std::string lp = "layer" + std::to_string(layer);
    const auto& tv = g.value(tokens);
    const int64_t B = tv.shape[0], N = tv.shape[1];
    const int64_t D = cfg.d_model, H = cfg.heads, Dh = cfg.d_head();
    const bool training = mode == ForwardMode::Train;
    Rng* drop_rng = training && cfg.dropout_rate > 0 && rng ? rng : nullptr;
    const S rate = drop_rng ? static_cast<S>(cfg.dropout_rate) : S(0);

    auto heads_split = [&](Var m) {
        // [B*N, D] -> [B*H, N, Dh]
        Var r = g.reshape(m, {B, N, H, Dh});
        r = g.permute(r, {0, 2, 1, 3});
        return g.reshape(r, {B * H, N, Dh});
    };

    Var flat = g.reshape(tokens, {B * N, D});
    Var q = heads_split(g.add_suffix(g.matmul(flat, p[lp + ".attn.wq"]), p[lp + ".attn.bq"]));
    Var k = heads_split(g.add_suffix(g.matmul(flat, p[lp + ".attn.wk"]), p[lp + ".attn.bk"]));
    Var v = heads_split(g.add_suffix(g.matmul(flat, p[lp + ".attn.wv"]), p[lp + ".attn.bv"]));

    Var scores = g.bmm(q, g.permute(k, {0, 2, 1}));
    scores = g.scale(scores, S(1) / static_cast<S>(std::sqrt(static_cast<double>(Dh))));
    Var attn = g.softmax_last(scores);
    Var ctx = g.bmm(attn, v); // [B*H, N, Dh]
    ctx = g.reshape(ctx, {B, H, N, Dh});
    ctx = g.permute(ctx, {0, 2, 1, 3});
    ctx = g.reshape(ctx, {B * N, D});
    Var out = g.add_suffix(g.matmul(ctx, p[lp + ".attn.wo"]), p[lp + ".attn.bo"]);
    out = g.reshape(out, {B, N, D});
    out = g.dropout(out, rate, drop_rng);
    Var res = g.add(tokens, out);
    Var normed = g.layernorm(res, p[lp + ".ln1.gamma"], p[lp + ".ln1.beta"]);

    Var mflat = g.reshape(normed, {B * N, D});
    Var h1 = g.gelu(g.add_suffix(g.matmul(mflat, p[lp + ".mlp.w1"]), p[lp + ".mlp.b1"]));
    Var h2 = g.add_suffix(g.matmul(h1, p[lp + ".mlp.w2"]), p[lp + ".mlp.b2"]);
    Var mlp_out = g.dropout(g.reshape(h2, {B, N, D}), rate, drop_rng);
    Var res2 = g.add(normed, mlp_out);
    return g.layernorm(res2, p[lp + ".ln2.gamma"], p[lp + ".ln2.beta"]);
}

struct EncodeOptions {
    ForwardMode mode = ForwardMode::Eval;
    Rng* dropout_rng = nullptr;
    bool update_running_stats = true;
    bool conv1_frozen_stats = false;
    bool conv2_frozen_stats = false;
};

// Full encoder: batch [B, T, 2J] -> class-token representation [B, d_model].
template <typename S>
typename GraphT<S>::Var encode(GraphT<S>& g, const BoundParamsT<S>& p, const EncoderConfig& cfg,
                               typename GraphT<S>::Var x, const EncodeOptions& opt = {}) {
    using Var = typename GraphT<S>::Var;
    const auto& xv = g.value(x);
    if (xv.rank() != 3 || xv.shape[1] != cfg.seq_len || xv.shape[2] != cfg.in_channels())
        throw DimensionError("encode: input " + shape_str(xv.shape) + " does not match config (T=" +
                             std::to_string(cfg.seq_len) + ", 2J=" + std::to_string(cfg.in_channels()) + ")");
    const int64_t B = xv.shape[0];
    Var conv = conv_stage(g, p, cfg, x, opt.mode, opt.update_running_stats, opt.conv1_frozen_stats,
                          opt.conv2_frozen_stats);
    const int64_t Tc = g.value(conv).shape[1];
    Var flat = g.reshape(conv, {B * Tc, cfg.conv_filters});
    Var proj = g.add_suffix(g.matmul(flat, p["proj.w"]), p["proj.b"]);
    Var tokens = g.reshape(proj, {B, Tc, cfg.d_model});
    tokens = g.prepend_token(tokens, p["cls"]);
    tokens = g.add_suffix(tokens, p["pos"]);
    const bool training = opt.mode == ForwardMode::Train;
    Rng* drop_rng = training && cfg.dropout_rate > 0 && opt.dropout_rng ? opt.dropout_rng : nullptr;
    tokens = g.dropout(tokens, drop_rng ? static_cast<S>(cfg.dropout_rate) : S(0), drop_rng);
    for (int l = 0; l < cfg.layers; ++l) tokens = attention_layer(g, p, cfg, tokens, l, opt.mode, opt.dropout_rng);
    return g.select_token(tokens, 0);
}

// Projector / predictor MLP: linear -> batchnorm -> nonlinearity -> linear.
template <typename S>
typename GraphT<S>::Var mlp_head(GraphT<S>& g, const BoundParamsT<S>& p, const std::string& prefix,
                                 HeadActivation act, typename GraphT<S>::Var x, ForwardMode mode,
                                 bool update_running) {
    using Var = typename GraphT<S>::Var;
    Var h = g.add_suffix(g.matmul(x, p[prefix + ".w1"]), p[prefix + ".b1"]);
    BnStatsT<S> stats = p.bn_stats(prefix + ".bn");
    const bool training = mode == ForwardMode::Train;
    Var n = g.batchnorm(h, p[prefix + ".bn.gamma"], p[prefix + ".bn.beta"], &stats, training,
                        update_running && training);
    if (update_running && training) p.store_bn_stats(prefix + ".bn", stats);
    Var a;
    switch (act) {
        case HeadActivation::Gelu: a = g.gelu(n); break;
        case HeadActivation::Selu: a = g.selu(n); break;
        case HeadActivation::Identity: a = n; break;
    }
    return g.add_suffix(g.matmul(a, p[prefix + ".w2"]), p[prefix + ".b2"]);
}

template <typename S>
typename GraphT<S>::Var classify(GraphT<S>& g, const BoundParamsT<S>& p, typename GraphT<S>::Var features) {
    return g.add_suffix(g.matmul(features, p["fc.w"]), p["fc.b"]);
}

} // namespace relsar
