// Test-side oracles, independent of the implementation paths they check:
// central finite differences for gradients, and a nearest-centroid
// classifier for the synthetic-data separability check.
#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "relsar/params.hpp"
#include "relsar/tensor.hpp"

namespace oracles {

// Central finite-difference gradient of a scalar function of one tensor.
inline relsar::Tensor64 fd_gradient(const std::function<double(const relsar::Tensor64&)>& f,
                                    const relsar::Tensor64& x, double h = 1e-5) {
    relsar::Tensor64 g(x.shape);
    relsar::Tensor64 xp = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double orig = xp(i);
        xp(i) = orig + h;
        const double fp = f(xp);
        xp(i) = orig - h;
        const double fm = f(xp);
        xp(i) = orig;
        g(i) = (fp - fm) / (2.0 * h);
    }
    return g;
}

struct GradCheckResult {
    double max_rel_err = 0.0;
    int64_t checked = 0;
    std::string worst;
};

inline double rel_err(double a, double b, double floor = 1e-6) {
    const double denom = std::max({std::abs(a), std::abs(b), floor});
    return std::abs(a - b) / denom;
}

// Compare an analytic gradient tensor against finite differences of f.
inline GradCheckResult check_gradient(const std::function<double(const relsar::Tensor64&)>& f,
                                      const relsar::Tensor64& x, const relsar::Tensor64& analytic,
                                      double h = 1e-5, double floor = 1e-6) {
    GradCheckResult r;
    relsar::Tensor64 fd = fd_gradient(f, x, h);
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double e = rel_err(analytic(i), fd(i), floor);
        if (e > r.max_rel_err) {
            r.max_rel_err = e;
            r.worst = "index " + std::to_string(i) + ": analytic " + std::to_string(analytic(i)) + " vs fd " +
                      std::to_string(fd(i));
        }
        ++r.checked;
    }
    return r;
}

// Finite differences over every scalar of every tensor in a parameter set.
// `loss` evaluates the model at the given parameters; `analytic` maps a
// parameter name to its gradient tensor.
inline GradCheckResult check_param_gradients(
    const std::function<double(const relsar::ParamSetT<double>&)>& loss, relsar::ParamSetT<double> params,
    const std::function<const relsar::Tensor64&(const std::string&)>& analytic, double h = 1e-5,
    double floor = 1e-6) {
    GradCheckResult r;
    for (const auto& name : params.order) {
        relsar::Tensor64& t = params.at(name);
        const relsar::Tensor64& g = analytic(name);
        for (int64_t i = 0; i < t.numel(); ++i) {
            const double orig = t(i);
            t(i) = orig + h;
            const double fp = loss(params);
            t(i) = orig - h;
            const double fm = loss(params);
            t(i) = orig;
            const double fd = (fp - fm) / (2.0 * h);
            const double e = rel_err(g(i), fd, floor);
            if (e > r.max_rel_err) {
                r.max_rel_err = e;
                r.worst = name + "[" + std::to_string(i) + "]: analytic " + std::to_string(g(i)) + " vs fd " +
                          std::to_string(fd);
            }
            ++r.checked;
        }
    }
    return r;
}

// Nearest-centroid classifier over flattened sequences. Returns train
// accuracy of classifying each sample against per-class centroids.
inline double nearest_centroid_accuracy(const std::vector<std::vector<float>>& samples,
                                        const std::vector<int>& labels, int num_classes) {
    const size_t dim = samples.front().size();
    std::vector<std::vector<double>> centroid(static_cast<size_t>(num_classes), std::vector<double>(dim, 0.0));
    std::vector<int> counts(static_cast<size_t>(num_classes), 0);
    for (size_t i = 0; i < samples.size(); ++i) {
        for (size_t d = 0; d < dim; ++d) centroid[static_cast<size_t>(labels[i])][d] += samples[i][d];
        ++counts[static_cast<size_t>(labels[i])];
    }
    for (int c = 0; c < num_classes; ++c)
        for (size_t d = 0; d < dim; ++d) centroid[static_cast<size_t>(c)][d] /= std::max(1, counts[static_cast<size_t>(c)]);
    int hits = 0;
    for (size_t i = 0; i < samples.size(); ++i) {
        int best = -1;
        double best_d = 0.0;
        for (int c = 0; c < num_classes; ++c) {
            double d2 = 0.0;
            for (size_t d = 0; d < dim; ++d) {
                const double diff = samples[i][d] - centroid[static_cast<size_t>(c)][d];
                d2 += diff * diff;
            }
            if (best < 0 || d2 < best_d) {
                best = c;
                best_d = d2;
            }
        }
        if (best == labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

} // namespace oracles
