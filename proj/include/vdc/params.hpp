#pragma once

#include <random>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "tensor.hpp"

namespace vdc {

/// Named parameter store shared by the trainable modules. Parameters are
/// watched onto a fresh tape each iteration and updated in place.
struct ParamSet {
    std::vector<std::string> names;
    std::vector<Tensor> values;

    Tensor& add(const std::string& name, Tensor t) {
        names.push_back(name);
        values.push_back(std::move(t));
        return values.back();
    }

    Tensor& at(const std::string& name) {
        for (std::size_t i = 0; i < names.size(); ++i)
            if (names[i] == name) return values[i];
        throw ValueError("ParamSet: unknown parameter " + name);
    }

    const Tensor& at(const std::string& name) const {
        return const_cast<ParamSet*>(this)->at(name);
    }

    std::size_t count() const {
        std::size_t n = 0;
        for (const auto& v : values) n += v.size();
        return n;
    }

    void watch_all(Tape& tape) {
        for (auto& v : values) tape.watch(v);
    }

    /// Detach from any previous tape (values keep their data).
    void detach_all() {
        for (auto& v : values) {
            v.tape = nullptr;
            v.node = -1;
            v.requires_grad = false;
        }
    }

    std::vector<Tensor> grads(const Gradients& g) const {
        std::vector<Tensor> out;
        out.reserve(values.size());
        for (const auto& v : values) out.push_back(g.grad(v));
        return out;
    }
};

inline Tensor random_init(Shape shape, std::mt19937_64& rng, double stddev) {
    std::normal_distribution<double> g(0.0, stddev);
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = g(rng);
    return t;
}

/// Fan-in scaled init for a (fan_in, fan_out) weight matrix.
inline Tensor xavier_init(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    return random_init(Shape{fan_in, fan_out}, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

}  // namespace vdc
