// Named parameter trees. A ParamSet holds trainable tensors plus
// non-trainable buffers (batchnorm running statistics) in a deterministic
// iteration order, so EMA updates, optimizers, checkpoints and bitwise
// comparisons all walk parameters identically.
#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "relsar/graph.hpp"
#include "relsar/tensor.hpp"

namespace relsar {

template <typename S>
struct ParamSetT {
    std::vector<std::string> order;
    std::map<std::string, TensorT<S>> tensors;
    std::vector<std::string> buffer_order;
    std::map<std::string, TensorT<S>> buffers;

    void add(const std::string& name, TensorT<S> t) {
        if (tensors.count(name)) throw std::runtime_error("duplicate parameter: " + name);
        order.push_back(name);
        tensors.emplace(name, std::move(t));
    }

    void add_buffer(const std::string& name, TensorT<S> t) {
        if (buffers.count(name)) throw std::runtime_error("duplicate buffer: " + name);
        buffer_order.push_back(name);
        buffers.emplace(name, std::move(t));
    }

    TensorT<S>& at(const std::string& name) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::runtime_error("missing parameter: " + name);
        return it->second;
    }
    const TensorT<S>& at(const std::string& name) const {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw std::runtime_error("missing parameter: " + name);
        return it->second;
    }
    TensorT<S>& buffer(const std::string& name) {
        auto it = buffers.find(name);
        if (it == buffers.end()) throw std::runtime_error("missing buffer: " + name);
        return it->second;
    }
    const TensorT<S>& buffer(const std::string& name) const {
        auto it = buffers.find(name);
        if (it == buffers.end()) throw std::runtime_error("missing buffer: " + name);
        return it->second;
    }

    int64_t scalar_count() const {
        int64_t n = 0;
        for (const auto& name : order) n += at(name).numel();
        return n;
    }

    bool all_finite() const {
        for (const auto& name : order)
            if (!at(name).all_finite()) return false;
        for (const auto& name : buffer_order)
            if (!buffer(name).all_finite()) return false;
        return true;
    }

    template <typename U>
    ParamSetT<U> cast() const {
        ParamSetT<U> out;
        for (const auto& name : order) out.add(name, at(name).template cast<U>());
        for (const auto& name : buffer_order) out.add_buffer(name, buffer(name).template cast<U>());
        return out;
    }
};

using ParamSet = ParamSetT<float>;

// Parameters bound into a graph as leaves, keyed by name. Running-stat
// buffers stay outside the graph and are referenced through BnStatsT views.
template <typename S>
struct BoundParamsT {
    GraphT<S>* graph = nullptr;
    ParamSetT<S>* set = nullptr;
    std::map<std::string, typename GraphT<S>::Var> vars;

    typename GraphT<S>::Var operator[](const std::string& name) const {
        auto it = vars.find(name);
        if (it == vars.end()) throw std::runtime_error("unbound parameter: " + name);
        return it->second;
    }

    // View over a pair of running-stat buffers named <prefix>.running_mean /
    // <prefix>.running_var. The view aliases the ParamSet storage.
    BnStatsT<S> bn_stats(const std::string& prefix) const {
        BnStatsT<S> s;
        s.running_mean = set->buffer(prefix + ".running_mean");
        s.running_var = set->buffer(prefix + ".running_var");
        return s;
    }

    void store_bn_stats(const std::string& prefix, const BnStatsT<S>& s) const {
        set->buffer(prefix + ".running_mean") = s.running_mean;
        set->buffer(prefix + ".running_var") = s.running_var;
    }
};

template <typename S>
BoundParamsT<S> bind(GraphT<S>& g, ParamSetT<S>& set) {
    BoundParamsT<S> b;
    b.graph = &g;
    b.set = &set;
    for (const auto& name : set.order) b.vars.emplace(name, g.leaf(set.at(name)));
    return b;
}

// Gradients read back after backward(), keyed like the ParamSet.
template <typename S>
std::map<std::string, TensorT<S>> collect_grads(const GraphT<S>& g, const BoundParamsT<S>& bound) {
    std::map<std::string, TensorT<S>> out;
    for (const auto& [name, var] : bound.vars) out.emplace(name, g.grad(var));
    return out;
}

} // namespace relsar
