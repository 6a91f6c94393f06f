// Seeded random number generation used everywhere randomness appears
// (weight init, augmentation, shuffling, synthetic data). Distributions are
// hand-rolled on top of a fixed-algorithm generator so that a given seed
// produces the same stream on every build of the same binary.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace relsar {

class Rng {
public:
    explicit Rng(uint64_t seed = 0) : gen_(seed) {}

    uint64_t next_u64() { return gen_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) {
        return lo + (hi - lo) * uniform();
    }

    // Standard normal via Box-Muller. One draw per call; the paired value is
    // discarded to keep the stream position independent of call parity.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
    }

    double normal(double mean, double stddev) {
        return mean + stddev * normal();
    }

    // Uniform integer in [0, n).
    uint64_t below(uint64_t n) {
        return gen_() % n;
    }

    bool bernoulli(double p) {
        return uniform() < p;
    }

    // Derive an independent stream, e.g. one per epoch or per file.
    Rng fork(uint64_t salt) {
        return Rng(gen_() ^ (salt * 0x9e3779b97f4a7c15ull));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static constexpr double kPi = 3.14159265358979323846;
    std::mt19937_64 gen_;
};

} // namespace relsar
