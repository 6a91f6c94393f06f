// Dense row-major tensor value type. Scalar type is a template parameter:
// float is the default storage used for training, double is used by the
// gradient-check suites where 32-bit tolerances are meaningless.
#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace relsar {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

template <typename S>
struct TensorT {
    Shape shape;
    std::vector<S> data;

    TensorT() = default;

    explicit TensorT(Shape s, S fill = S(0)) : shape(std::move(s)) {
        for (int64_t d : shape) {
            if (d <= 0) throw DimensionError("tensor extent must be positive, got " + shape_str(shape));
        }
        data.assign(static_cast<size_t>(shape_numel(shape)), fill);
    }

    TensorT(Shape s, std::vector<S> values) : shape(std::move(s)), data(std::move(values)) {
        if (shape_numel(shape) != static_cast<int64_t>(data.size()))
            throw DimensionError("data length does not match shape " + shape_str(shape));
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

    S& operator()(int64_t i) { return data[static_cast<size_t>(i)]; }
    S operator()(int64_t i) const { return data[static_cast<size_t>(i)]; }
    S& operator()(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    S operator()(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
    S& operator()(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    S operator()(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    bool same_shape(const TensorT& other) const { return shape == other.shape; }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void fill(S v) { std::fill(data.begin(), data.end(), v); }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

} // namespace relsar
