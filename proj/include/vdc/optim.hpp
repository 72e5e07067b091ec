#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace vdc {

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long step_count = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    static AdamState init(const std::vector<Tensor>& params, double beta1 = 0.9,
                          double beta2 = 0.999, double epsilon = 1e-8) {
        AdamState s;
        s.beta1 = beta1;
        s.beta2 = beta2;
        s.epsilon = epsilon;
        s.m.reserve(params.size());
        s.v.reserve(params.size());
        for (const auto& p : params) {
            s.m.emplace_back(p.size(), 0.0);
            s.v.emplace_back(p.size(), 0.0);
        }
        return s;
    }
};

/// Bias-corrected Adam update applied in place. `names`, when given, labels
/// parameters in error messages.
inline void adam_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                      AdamState& state, double lr,
                      const std::vector<std::string>* names = nullptr) {
    if (lr <= 0.0) throw ValueError("adam_step: lr must be positive");
    if (params.size() != grads.size() || params.size() != state.m.size())
        throw ShapeError("adam_step: parameter/gradient/state count mismatch");

    auto pname = [&](std::size_t i) {
        return names && i < names->size() ? (*names)[i] : "param[" + std::to_string(i) + "]";
    };
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != grads[i].size() || params[i].size() != state.m[i].size())
            throw ShapeError("adam_step: shape mismatch for " + pname(i));
        if (!grads[i].all_finite())
            throw ValueError("adam_step: non-finite gradient for " + pname(i));
    }

    state.step_count += 1;
    double t = static_cast<double>(state.step_count);
    double bc1 = 1.0 - std::pow(state.beta1, t);
    double bc2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& p = params[i].data;
        const auto& g = grads[i].data;
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < p.size(); ++j) {
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g[j];
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g[j] * g[j];
            double mhat = m[j] / bc1;
            double vhat = v[j] / bc2;
            p[j] -= lr * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

struct CosineSchedule {
    double lr_max = 5e-3;
    double lr_min = 1e-3;
    long total_steps = 200;
};

/// lr(i) = lr_min + (lr_max - lr_min) * (1 + cos(pi * i / total)) / 2
inline double cosine_lr(long i, const CosineSchedule& sched) {
    if (i < 0 || i > sched.total_steps)
        throw ValueError("cosine_lr: step " + std::to_string(i) + " outside [0, " +
                         std::to_string(sched.total_steps) + "]");
    double frac = sched.total_steps == 0
                      ? 1.0
                      : static_cast<double>(i) / static_cast<double>(sched.total_steps);
    return sched.lr_min + 0.5 * (sched.lr_max - sched.lr_min) * (1.0 + std::cos(M_PI * frac));
}

}  // namespace vdc
