// Stochastic augmentations producing the two BYOL views of a window.
#pragma once

#include <cstdint>

#include "relsar/rng.hpp"
#include "relsar/skeleton.hpp"

namespace relsar {

enum class FlipMode { Temporal, Spatial };

FlipMode flip_mode_from_string(const std::string& s);
std::string to_string(FlipMode m);

struct AugmentConfig {
    double noise_std = 0.01;  // normalized-coordinate units
    double scale_lo = 0.9;
    double scale_hi = 1.1;
    double flip_prob = 0.5;
    FlipMode flip_mode = FlipMode::Temporal;

    void validate() const;
    bool is_identity() const { return noise_std == 0.0 && scale_lo == 1.0 && scale_hi == 1.0 && flip_prob == 0.0; }
};

// Adds i.i.d. zero-mean Gaussian noise to every coordinate.
SkeletonSequence jitter(const SkeletonSequence& seq, double noise_std, Rng& rng);

// Multiplies all coordinates by one scalar drawn uniformly from [lo, hi].
SkeletonSequence random_scale(const SkeletonSequence& seq, double lo, double hi, Rng& rng);

// With probability flip_prob, flips the sequence. Temporal mode reverses
// the frame order; spatial mode negates the y axis.
SkeletonSequence random_flip(const SkeletonSequence& seq, double flip_prob, FlipMode mode, Rng& rng);

// Deterministic flip used by both random_flip and tests.
SkeletonSequence flip(const SkeletonSequence& seq, FlipMode mode);

// Two independent draws of flip -> scale -> jitter.
std::pair<SkeletonSequence, SkeletonSequence> make_views(const SkeletonSequence& seq, const AugmentConfig& cfg,
                                                         Rng& rng);

} // namespace relsar
