#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace vdc {

class Tape;

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << ")";
    return os.str();
}

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ValueError : std::runtime_error {
    explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Dense row-major array of 64-bit reals. When produced by a tape-recorded
/// operation it carries its node id so backward() can reach it.
struct Tensor {
    Shape shape;
    std::vector<double> data;
    bool requires_grad = false;
    Tape* tape = nullptr;
    int node = -1;

    Tensor() = default;

    explicit Tensor(Shape s, double fill = 0.0)
        : shape(std::move(s)), data(numel(shape), fill) {}

    Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel(shape) != data.size())
            throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                             std::to_string(data.size()));
    }

    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

    std::size_t size() const { return data.size(); }

    double value() const {
        if (data.size() != 1)
            throw ShapeError("tensor: value() requires a scalar, got shape " + shape_str(shape));
        return data[0];
    }

    bool on_tape() const { return tape != nullptr && node >= 0; }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    /// Detached copy: same values, no tape participation.
    Tensor detach() const {
        Tensor t;
        t.shape = shape;
        t.data = data;
        return t;
    }
};

inline bool same_shape(const Tensor& a, const Tensor& b) { return a.shape == b.shape; }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b))
        throw ShapeError("max_abs_diff: shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
    double m = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

inline double mse(const Tensor& a, const Tensor& b) {
    if (!same_shape(a, b))
        throw ShapeError("mse: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    double acc = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = a.data[i] - b.data[i];
        acc += d * d;
    }
    return a.data.empty() ? 0.0 : acc / static_cast<double>(a.data.size());
}

}  // namespace vdc
