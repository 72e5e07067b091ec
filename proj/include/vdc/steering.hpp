#pragma once

#include <stdexcept>
#include <string>

#include "autodiff.hpp"
#include "condgen.hpp"
#include "ddim.hpp"
#include "tensor.hpp"

namespace vdc {

// Classifier-free-style steering of the noise prediction:
//   eps_hat = (1 - w) eps_cond + w eps_uncond
// with the guidance weight derived from a nonnegative scale s. "remove"
// (w = 1 + s) pushes the sample away from the condition, "add" (w = 1 - s)
// pushes toward it; s = 0 collapses both to the unconditional prediction.

enum class SteerDirection { remove, add };

inline std::string direction_name(SteerDirection d) {
    return d == SteerDirection::remove ? "remove" : "add";
}

inline SteerDirection parse_direction(const std::string& s) {
    if (s == "remove") return SteerDirection::remove;
    if (s == "add") return SteerDirection::add;
    throw ValueError("unknown steering direction: " + s);
}

struct SteeringConfig {
    double s = 7.0;
    SteerDirection direction = SteerDirection::remove;

    double w() const {
        if (s < 0.0) throw ValueError("steering: scale must be nonnegative");
        return direction == SteerDirection::remove ? 1.0 + s : 1.0 - s;
    }
};

inline Tensor steer_eps(const Tensor& eps_cond, const Tensor& eps_uncond,
                        const SteeringConfig& cfg) {
    if (!same_shape(eps_cond, eps_uncond))
        throw ShapeError("steer_eps: eps_cond " + shape_str(eps_cond.shape) + " vs eps_uncond " +
                         shape_str(eps_uncond.shape));
    double w = cfg.w();
    return add(scale(eps_cond, 1.0 - w), scale(eps_uncond, w));
}

/// Residual of the equivalent incremental form
///   eps_hat = eps_uncond + (1 - w)(eps_cond - eps_uncond);
/// exactly zero up to floating-point rearrangement.
inline double posterior_score_residual(const Tensor& eps_cond, const Tensor& eps_uncond,
                                       const SteeringConfig& cfg) {
    Tensor blended = steer_eps(eps_cond, eps_uncond, cfg);
    Tensor incremental =
        add(eps_uncond, scale(sub(eps_cond, eps_uncond), 1.0 - cfg.w()));
    return max_abs_diff(blended, incremental);
}

/// Guidance provider that queries the condition stack for the current path
/// position. Costs exactly two denoiser calls per step while steering is
/// active (s > 0) and one when it degenerates to the unconditional sampler.
struct SteeringGuidance final : GuidanceProvider {
    DenoiserModel& denoiser;
    const ConditionStack& stack;
    SteeringConfig cfg;
    long calls = 0;

    SteeringGuidance(DenoiserModel& d, const ConditionStack& st, const SteeringConfig& c)
        : denoiser(d), stack(st), cfg(c) {
        (void)cfg.w();  // validate the scale up front
    }

    Tensor eps_hat(const Tensor& z, int t, int path_pos) override {
        if (cfg.s == 0.0) {
            ++calls;
            return denoiser.eps(z, t, nullptr);
        }
        Tensor cond = generate_condition(stack, path_pos);
        Tensor eps_c = denoiser.eps(z, t, &cond);
        Tensor eps_u = denoiser.eps(z, t, nullptr);
        calls += 2;
        return steer_eps(eps_c, eps_u, cfg);
    }

    long nfe() const override { return calls; }
};

}  // namespace vdc
