#include "relsar/augment.hpp"

#include <stdexcept>

namespace relsar {

FlipMode flip_mode_from_string(const std::string& s) {
    if (s == "temporal") return FlipMode::Temporal;
    if (s == "spatial") return FlipMode::Spatial;
    throw std::runtime_error("augment.flip_mode: unknown value '" + s + "'");
}

std::string to_string(FlipMode m) {
    return m == FlipMode::Temporal ? "temporal" : "spatial";
}

void AugmentConfig::validate() const {
    if (noise_std < 0.0) throw std::runtime_error("augment.noise_std must be non-negative");
    if (scale_lo > scale_hi) throw std::runtime_error("augment.scale range has lo > hi");
    if (flip_prob < 0.0 || flip_prob > 1.0) throw std::runtime_error("augment.flip_prob outside [0,1]");
}

SkeletonSequence jitter(const SkeletonSequence& seq, double noise_std, Rng& rng) {
    if (noise_std < 0.0) throw std::runtime_error("jitter: noise_std must be non-negative");
    if (noise_std == 0.0) return seq;
    SkeletonSequence out = seq;
    for (auto& v : out.coords) v += static_cast<float>(rng.normal(0.0, noise_std));
    return out;
}

SkeletonSequence random_scale(const SkeletonSequence& seq, double lo, double hi, Rng& rng) {
    if (lo > hi) throw std::runtime_error("random_scale: lo > hi");
    if (lo == 1.0 && hi == 1.0) return seq;
    const float s = static_cast<float>(rng.uniform(lo, hi));
    SkeletonSequence out = seq;
    for (auto& v : out.coords) v *= s;
    return out;
}

SkeletonSequence flip(const SkeletonSequence& seq, FlipMode mode) {
    SkeletonSequence out = seq;
    if (mode == FlipMode::Temporal) {
        for (int t = 0; t < seq.frames; ++t)
            for (int j = 0; j < seq.joints; ++j) {
                out.x(t, j) = seq.x(seq.frames - 1 - t, j);
                out.y(t, j) = seq.y(seq.frames - 1 - t, j);
            }
    } else {
        for (int t = 0; t < seq.frames; ++t)
            for (int j = 0; j < seq.joints; ++j) out.y(t, j) = -seq.y(t, j);
    }
    return out;
}

SkeletonSequence random_flip(const SkeletonSequence& seq, double flip_prob, FlipMode mode, Rng& rng) {
    if (flip_prob < 0.0 || flip_prob > 1.0) throw std::runtime_error("random_flip: probability outside [0,1]");
    if (flip_prob == 0.0) return seq;
    return rng.bernoulli(flip_prob) ? flip(seq, mode) : seq;
}

std::pair<SkeletonSequence, SkeletonSequence> make_views(const SkeletonSequence& seq, const AugmentConfig& cfg,
                                                         Rng& rng) {
    cfg.validate();
    auto draw = [&]() {
        SkeletonSequence v = random_flip(seq, cfg.flip_prob, cfg.flip_mode, rng);
        v = random_scale(v, cfg.scale_lo, cfg.scale_hi, rng);
        return jitter(v, cfg.noise_std, rng);
    };
    SkeletonSequence a = draw();
    SkeletonSequence b = draw();
    return {std::move(a), std::move(b)};
}

} // namespace relsar
