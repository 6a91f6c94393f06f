#include "relsar/model.hpp"

#include <stdexcept>

namespace relsar {

void EncoderConfig::validate() const {
    if (conv_filters <= 0 || kernel_size <= 0 || layers <= 0 || heads <= 0 || d_model <= 0)
        throw ConfigError("encoder: all extents must be positive");
    if (d_model % heads != 0) throw ConfigError("encoder: d_model must be divisible by heads");
    if (seq_len < 4) throw ConfigError("encoder: seq_len must be at least 4 for two pooling stages");
    if (joints <= 0) throw ConfigError("encoder: joints must be positive");
    if (dropout_rate < 0.0f || dropout_rate >= 1.0f) throw ConfigError("encoder: dropout_rate must be in [0,1)");
}

void HeadConfig::validate() const {
    if (proj_hidden <= 0 || proj_dim <= 0) throw ConfigError("heads: dims must be positive");
}

HeadActivation head_activation_from_string(const std::string& s) {
    if (s == "gelu") return HeadActivation::Gelu;
    if (s == "selu") return HeadActivation::Selu;
    if (s == "identity") return HeadActivation::Identity;
    throw ConfigError("heads.activation: unknown value '" + s + "'");
}

std::string to_string(HeadActivation a) {
    switch (a) {
        case HeadActivation::Gelu: return "gelu";
        case HeadActivation::Selu: return "selu";
        case HeadActivation::Identity: return "identity";
    }
    return "gelu";
}

namespace {

// Fan-in scaled uniform init for linear and conv weights.
Tensor uniform_fan_in(const Shape& shape, int64_t fan_in, Rng& rng) {
    Tensor t(shape);
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
    return t;
}

Tensor normal_init(const Shape& shape, double stddev, Rng& rng) {
    Tensor t(shape);
    for (auto& v : t.data) v = static_cast<float>(rng.normal(0.0, stddev));
    return t;
}

void add_bn(ParamSet& p, const std::string& prefix, int64_t c) {
    p.add(prefix + ".gamma", Tensor(Shape{c}, 1.0f));
    p.add(prefix + ".beta", Tensor(Shape{c}));
    p.add_buffer(prefix + ".running_mean", Tensor(Shape{c}));
    p.add_buffer(prefix + ".running_var", Tensor(Shape{c}, 1.0f));
}

} // namespace

ParamSet init_encoder_params(const EncoderConfig& cfg, Rng& rng) {
    cfg.validate();
    ParamSet p;
    const int64_t F = cfg.conv_filters, K = cfg.kernel_size, D = cfg.d_model;
    const int64_t Cin = cfg.in_channels();

    p.add("conv1.w", uniform_fan_in({K, Cin, F}, K * Cin, rng));
    p.add("conv1.b", Tensor(Shape{F}));
    add_bn(p, "conv1.bn", F);
    p.add("conv2.w", uniform_fan_in({K, F, F}, K * F, rng));
    p.add("conv2.b", Tensor(Shape{F}));
    add_bn(p, "conv2.bn", F);

    p.add("proj.w", uniform_fan_in({F, D}, F, rng));
    p.add("proj.b", Tensor(Shape{D}));
    p.add("cls", normal_init({D}, 0.02, rng));
    p.add("pos", normal_init({cfg.tokens(), D}, 0.02, rng));

    for (int l = 0; l < cfg.layers; ++l) {
        const std::string lp = "layer" + std::to_string(l);
        for (const char* m : {".attn.wq", ".attn.wk", ".attn.wv", ".attn.wo"})
            p.add(lp + m, uniform_fan_in({D, D}, D, rng));
        for (const char* b : {".attn.bq", ".attn.bk", ".attn.bv", ".attn.bo"}) p.add(lp + b, Tensor(Shape{D}));
        p.add(lp + ".ln1.gamma", Tensor(Shape{D}, 1.0f));
        p.add(lp + ".ln1.beta", Tensor(Shape{D}));
        p.add(lp + ".mlp.w1", uniform_fan_in({D, cfg.d_mlp()}, D, rng));
        p.add(lp + ".mlp.b1", Tensor(Shape{static_cast<int64_t>(cfg.d_mlp())}));
        p.add(lp + ".mlp.w2", uniform_fan_in({cfg.d_mlp(), D}, cfg.d_mlp(), rng));
        p.add(lp + ".mlp.b2", Tensor(Shape{D}));
        p.add(lp + ".ln2.gamma", Tensor(Shape{D}, 1.0f));
        p.add(lp + ".ln2.beta", Tensor(Shape{D}));
    }
    return p;
}

ParamSet init_projector_params(int in_dim, const HeadConfig& heads, Rng& rng) {
    heads.validate();
    ParamSet p;
    p.add("head.w1", uniform_fan_in({in_dim, heads.proj_hidden}, in_dim, rng));
    p.add("head.b1", Tensor(Shape{static_cast<int64_t>(heads.proj_hidden)}));
    add_bn(p, "head.bn", heads.proj_hidden);
    p.add("head.w2", uniform_fan_in({heads.proj_hidden, heads.proj_dim}, heads.proj_hidden, rng));
    p.add("head.b2", Tensor(Shape{static_cast<int64_t>(heads.proj_dim)}));
    return p;
}

ParamSet init_predictor_params(const HeadConfig& heads, Rng& rng) {
    heads.validate();
    ParamSet q;
    q.add("head.w1", uniform_fan_in({heads.proj_dim, heads.proj_hidden}, heads.proj_dim, rng));
    q.add("head.b1", Tensor(Shape{heads.proj_hidden}));
    add_bn(q, "head.bn", heads.proj_hidden);
    q.add("head.w2", uniform_fan_in({heads.proj_hidden, heads.proj_dim}, heads.proj_hidden, rng));
    q.add("head.b2", Tensor(Shape{heads.proj_dim}));
    return q;
}

ParamSet init_classifier_params(int in_dim, int num_classes, Rng& rng) {
    if (num_classes < 2) throw ConfigError("classifier: need at least two classes");
    ParamSet p;
    p.add("fc.w", uniform_fan_in({in_dim, num_classes}, in_dim, rng));
    p.add("fc.b", Tensor(Shape{static_cast<int64_t>(num_classes)}));
    return p;
}

int64_t count_params(const EncoderConfig& cfg, int num_classes) {
    cfg.validate();
    const int64_t F = cfg.conv_filters, K = cfg.kernel_size, D = cfg.d_model;
    const int64_t Cin = cfg.in_channels(), N = cfg.tokens();
    int64_t total = 0;
    total += K * Cin * F + F + 2 * F; // conv1 + batchnorm affine
    total += K * F * F + F + 2 * F;   // conv2 + batchnorm affine
    total += F * D + D;               // linear projection
    total += D;                       // class token
    total += N * D;                   // positional embedding
    const int64_t attn = 4 * (D * D + D);
    const int64_t mlp = D * cfg.d_mlp() + cfg.d_mlp() + cfg.d_mlp() * D + D;
    const int64_t norms = 2 * 2 * D;
    total += cfg.layers * (attn + mlp + norms);
    if (num_classes > 0) total += D * num_classes + num_classes;
    return total;
}

double estimate_flops(const EncoderConfig& cfg, int num_classes) {
    cfg.validate();
    const double F = cfg.conv_filters, K = cfg.kernel_size, D = cfg.d_model;
    const double Cin = cfg.in_channels();
    const double T = cfg.seq_len;
    const double T1 = static_cast<double>(cfg.seq_len / 2);
    const double Tc = cfg.conv_out_len();
    const double N = cfg.tokens();
    const double H = cfg.heads, Dh = cfg.d_head();
    double macs = 0.0;
    macs += T * K * Cin * F;  // conv block 1
    macs += T1 * K * F * F;   // conv block 2
    macs += Tc * F * D;       // projection
    const double attn = 3.0 * N * D * D   // Q, K, V
                        + H * N * N * Dh  // scores
                        + H * N * N * Dh  // weighted values
                        + N * D * D;      // output projection
    const double mlp = 2.0 * N * D * cfg.d_mlp();
    macs += cfg.layers * (attn + mlp);
    if (num_classes > 0) macs += D * num_classes;
    return 2.0 * macs;
}

} // namespace relsar
