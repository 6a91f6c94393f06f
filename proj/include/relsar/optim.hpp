// Optimizers and learning-rate schedules.
#pragma once

#include <cmath>
#include <map>
#include <set>
#include <stdexcept>
#include <string>

#include "relsar/params.hpp"

namespace relsar {

// Cosine decay from `initial` to 0 over `decay_steps` optimizer steps, held
// at the final value afterwards. cosine_lr(0) == initial.
inline double cosine_lr(int64_t step, double initial, int64_t decay_steps) {
    if (initial <= 0.0) throw ConfigError("cosine_lr: initial rate must be positive");
    if (decay_steps <= 0) throw ConfigError("cosine_lr: decay_steps must be positive");
    if (step >= decay_steps) return 0.0;
    const double frac = static_cast<double>(step) / static_cast<double>(decay_steps);
    return initial * 0.5 * (1.0 + std::cos(3.14159265358979323846 * frac));
}

// SGD with classical momentum and L2 weight decay folded into the gradient.
class SgdMomentum {
public:
    SgdMomentum(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {
        if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("sgd: momentum must be in [0,1)");
        if (weight_decay < 0.0) throw ConfigError("sgd: weight decay must be non-negative");
    }

    void step(ParamSet& params, const std::map<std::string, Tensor>& grads, double lr,
              const std::set<std::string>* frozen = nullptr) {
        if (lr < 0.0) throw ConfigError("sgd: learning rate must be non-negative");
        for (const auto& name : params.order) {
            if (frozen && frozen->count(name)) continue;
            auto git = grads.find(name);
            if (git == grads.end()) continue;
            Tensor& p = params.at(name);
            Tensor& v = velocity(name, p);
            const Tensor& g = git->second;
            for (int64_t i = 0; i < p.numel(); ++i) {
                const float gi = g(i) + static_cast<float>(weight_decay_) * p(i);
                v(i) = static_cast<float>(momentum_) * v(i) + gi;
                p(i) -= static_cast<float>(lr) * v(i);
            }
        }
    }

    std::map<std::string, Tensor>& state() { return velocity_; }
    const std::map<std::string, Tensor>& state() const { return velocity_; }

private:
    Tensor& velocity(const std::string& name, const Tensor& like) {
        auto it = velocity_.find(name);
        if (it == velocity_.end()) it = velocity_.emplace(name, Tensor(like.shape)).first;
        return it->second;
    }

    double momentum_;
    double weight_decay_;
    std::map<std::string, Tensor> velocity_;
};

// AdamW with decoupled weight decay.
class AdamW {
public:
    AdamW(double beta1 = 0.9, double beta2 = 0.999, double weight_decay = 0.0, double eps = 1e-8)
        : beta1_(beta1), beta2_(beta2), weight_decay_(weight_decay), eps_(eps) {
        if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
            throw ConfigError("adamw: betas must be in [0,1)");
        if (weight_decay < 0.0) throw ConfigError("adamw: weight decay must be non-negative");
    }

    void step(ParamSet& params, const std::map<std::string, Tensor>& grads, double lr,
              const std::set<std::string>* frozen = nullptr) {
        if (lr < 0.0) throw ConfigError("adamw: learning rate must be non-negative");
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
        for (const auto& name : params.order) {
            if (frozen && frozen->count(name)) continue;
            auto git = grads.find(name);
            if (git == grads.end()) continue;
            Tensor& p = params.at(name);
            Tensor& m = moment(m_, name, p);
            Tensor& v = moment(v_, name, p);
            const Tensor& g = git->second;
            for (int64_t i = 0; i < p.numel(); ++i) {
                m(i) = static_cast<float>(beta1_ * m(i) + (1.0 - beta1_) * g(i));
                v(i) = static_cast<float>(beta2_ * v(i) + (1.0 - beta2_) * g(i) * g(i));
                const double mhat = m(i) / bc1;
                const double vhat = v(i) / bc2;
                p(i) -= static_cast<float>(lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * p(i)));
            }
        }
    }

    int64_t steps_taken() const { return t_; }

private:
    static Tensor& moment(std::map<std::string, Tensor>& store, const std::string& name, const Tensor& like) {
        auto it = store.find(name);
        if (it == store.end()) it = store.emplace(name, Tensor(like.shape)).first;
        return it->second;
    }

    double beta1_, beta2_, weight_decay_, eps_;
    int64_t t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

} // namespace relsar
