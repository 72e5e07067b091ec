#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "autodiff.hpp"
#include "schedule.hpp"
#include "tensor.hpp"

namespace vdc {

/// Noise-prediction contract: eps(z, t, cond). cond == nullptr means the null
/// condition (unconditional branch). Implementations must keep the output
/// shape equal to the latent shape and, when inputs sit on a tape, stay
/// differentiable w.r.t. z and cond.
struct DenoiserModel {
    virtual ~DenoiserModel() = default;
    virtual Tensor eps(const Tensor& z, int t, const Tensor* cond) = 0;
};

/// Wrapper counting every denoiser evaluation (the NFE unit).
struct CountingDenoiser final : DenoiserModel {
    DenoiserModel& inner;
    long calls = 0;
    explicit CountingDenoiser(DenoiserModel& d) : inner(d) {}
    Tensor eps(const Tensor& z, int t, const Tensor* cond) override {
        ++calls;
        return inner.eps(z, t, cond);
    }
};

struct Trajectory {
    std::vector<std::pair<int, Tensor>> latents;  // (timestep, latent)
    long nfe_count = 0;

    const Tensor& final_latent() const { return latents.back().second; }
};

/// Per-step noise source for ddim_sample. path_pos counts down the active
/// suffix (p, ..., 1). nfe() must report cumulative denoiser calls.
struct GuidanceProvider {
    virtual ~GuidanceProvider() = default;
    virtual Tensor eps_hat(const Tensor& z, int t, int path_pos) = 0;
    virtual long nfe() const = 0;
};

struct UnconditionalGuidance final : GuidanceProvider {
    DenoiserModel& denoiser;
    const Tensor* null_condition;
    long calls = 0;
    UnconditionalGuidance(DenoiserModel& d, const Tensor* null_cond = nullptr)
        : denoiser(d), null_condition(null_cond) {}
    Tensor eps_hat(const Tensor& z, int t, int) override {
        ++calls;
        return denoiser.eps(z, t, null_condition);
    }
    long nfe() const override { return calls; }
};

namespace detail {
inline void check_chain_pair(const NoiseSchedule& sched, int t_lo, int t_hi, bool allow_skip,
                             const char* what) {
    int ci_lo = sched.chain_index(t_lo);
    int ci_hi = sched.chain_index(t_hi);
    if (ci_lo < 0 || ci_hi < 0)
        throw ValueError(std::string(what) + ": timesteps " + std::to_string(t_lo) + "," +
                         std::to_string(t_hi) + " not in the sampling subsequence");
    if (ci_hi <= ci_lo)
        throw ValueError(std::string(what) + ": expected an ordered step pair, got " +
                         std::to_string(t_lo) + " -> " + std::to_string(t_hi));
    if (!allow_skip && ci_hi != ci_lo + 1)
        throw ValueError(std::string(what) + ": non-adjacent steps " + std::to_string(t_lo) +
                         "," + std::to_string(t_hi) + " (pass allow_skip to permit)");
}
}  // namespace detail

/// Deterministic (eta=0) DDIM update from t_from down to t_to:
///   x0_hat = (z - sqrt(1-ab_from) eps) / sqrt(ab_from)
///   z_to   = sqrt(ab_to) x0_hat + sqrt(1-ab_to) eps
inline Tensor ddim_step(const Tensor& z_t, int t_from, int t_to, const Tensor& eps_hat,
                        const NoiseSchedule& sched, bool allow_skip = false) {
    if (!same_shape(z_t, eps_hat))
        throw ShapeError("ddim_step: z " + shape_str(z_t.shape) + " vs eps " +
                         shape_str(eps_hat.shape));
    detail::check_chain_pair(sched, t_to, t_from, allow_skip, "ddim_step");
    double ab_f = sched.alpha_bar(t_from);
    double ab_t = sched.alpha_bar(t_to);
    Tensor x0 = scale(sub(z_t, scale(eps_hat, std::sqrt(1.0 - ab_f))), 1.0 / std::sqrt(ab_f));
    return add(scale(x0, std::sqrt(ab_t)), scale(eps_hat, std::sqrt(1.0 - ab_t)));
}

/// One naive inversion step from t_from up to t_to. The denoiser is queried at
/// the current (lower) latent standing in for the unknown higher one; the
/// timestep passed is t_to, matching the sampling step this inverts.
inline Tensor ddim_invert_step(const Tensor& z_low, int t_from, int t_to,
                               DenoiserModel& eps_provider, const Tensor* condition,
                               const NoiseSchedule& sched, bool allow_skip = false) {
    detail::check_chain_pair(sched, t_from, t_to, allow_skip, "ddim_invert_step");
    Tensor eps = eps_provider.eps(z_low, t_to, condition);
    if (!same_shape(z_low, eps))
        throw ShapeError("ddim_invert_step: denoiser output " + shape_str(eps.shape) +
                         " does not match latent " + shape_str(z_low.shape));
    double ab_f = sched.alpha_bar(t_from);
    double ab_t = sched.alpha_bar(t_to);
    Tensor x0 = scale(sub(z_low, scale(eps, std::sqrt(1.0 - ab_f))), 1.0 / std::sqrt(ab_f));
    return add(scale(x0, std::sqrt(ab_t)), scale(eps, std::sqrt(1.0 - ab_t)));
}

/// Run the sampler down the schedule suffix from chain position p_index to 0.
/// Records every latent and the number of denoiser calls made on the way.
inline Trajectory ddim_sample(const Tensor& z_p, int p_index, GuidanceProvider& guidance,
                              const NoiseSchedule& sched) {
    if (p_index < 0 || p_index > sched.K())
        throw ValueError("ddim_sample: p_index " + std::to_string(p_index) + " outside [0, " +
                         std::to_string(sched.K()) + "]");
    Trajectory traj;
    long nfe0 = guidance.nfe();
    Tensor z = z_p;
    traj.latents.emplace_back(sched.chain_step(p_index), z);
    for (int pos = p_index; pos >= 1; --pos) {
        int t_from = sched.chain_step(pos);
        int t_to = sched.chain_step(pos - 1);
        Tensor eps = guidance.eps_hat(z, t_from, pos);
        z = ddim_step(z, t_from, t_to, eps, sched);
        traj.latents.emplace_back(t_to, z);
    }
    traj.nfe_count = guidance.nfe() - nfe0;
    return traj;
}

/// Naive DDIM inversion: ascend chain positions 0..p_index under the null
/// condition.
inline Trajectory ddim_invert(const Tensor& z0, int p_index, const NoiseSchedule& sched,
                              DenoiserModel& denoiser, const Tensor* null_condition) {
    if (p_index < 0 || p_index > sched.K())
        throw ValueError("ddim_invert: p_index " + std::to_string(p_index) + " outside [0, " +
                         std::to_string(sched.K()) + "]");
    Trajectory traj;
    CountingDenoiser counted(denoiser);
    Tensor z = z0;
    traj.latents.emplace_back(0, z);
    for (int pos = 0; pos < p_index; ++pos) {
        int t_from = sched.chain_step(pos);
        int t_to = sched.chain_step(pos + 1);
        z = ddim_invert_step(z, t_from, t_to, counted, null_condition, sched);
        traj.latents.emplace_back(t_to, z);
    }
    traj.nfe_count = counted.calls;
    return traj;
}

}  // namespace vdc
