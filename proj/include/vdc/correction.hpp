#pragma once

#include <limits>
#include <vector>

#include "autodiff.hpp"
#include "ddim.hpp"
#include "optim.hpp"
#include "tensor.hpp"

namespace vdc {

// Latent-optimization repair of naive DDIM inversion: treat the inverted
// latent itself as the free variable and minimize the reconstruction error of
// the unconditional forward pass back to the known clean latent.

struct CorrectionConfig {
    long iterations = 200;
    double lr = 1e-2;
    bool keep_best = true;
};

struct CorrectionLogRow {
    long iteration;  // -1 marks the initial evaluation
    double mse;
    long nfe_running;
};

struct CorrectionResult {
    Tensor z_p;
    double initial_mse = 0.0;
    double final_mse = 0.0;
    long nfe = 0;
    std::vector<CorrectionLogRow> log;
};

/// Optimize z_p so that sampling it down to position 0 reproduces z0_target.
/// iterations == 0 returns the naive latent untouched (but still scores it).
inline CorrectionResult correct_inversion(const Tensor& z0_target, const Tensor& z_p_naive,
                                          int p_index, DenoiserModel& denoiser,
                                          const NoiseSchedule& sched,
                                          const CorrectionConfig& cfg) {
    if (!same_shape(z0_target, z_p_naive))
        throw ShapeError("correct_inversion: target " + shape_str(z0_target.shape) +
                         " vs latent " + shape_str(z_p_naive.shape));
    if (p_index < 1 || p_index > sched.K())
        throw ValueError("correct_inversion: p_index " + std::to_string(p_index) +
                         " outside [1, " + std::to_string(sched.K()) + "]");
    if (cfg.iterations < 0) throw ValueError("correct_inversion: negative iteration count");

    CountingDenoiser counted(denoiser);
    double inv_n = 1.0 / static_cast<double>(numel(z0_target.shape));

    auto reconstruction_loss = [&](const Tensor& z) {
        UnconditionalGuidance guidance(counted);
        Trajectory traj = ddim_sample(z, p_index, guidance, sched);
        return scale(squared_l2(sub(traj.final_latent(), z0_target)), inv_n);
    };

    CorrectionResult res;
    Tensor z = z_p_naive.detach();
    res.initial_mse = reconstruction_loss(z).value();
    res.log.push_back({-1, res.initial_mse, counted.calls});

    Tensor best = z.detach();
    double best_mse = res.initial_mse;

    std::vector<Tensor> param{z};
    auto state = AdamState::init(param);
    for (long i = 0; i < cfg.iterations; ++i) {
        Tape tape;
        tape.watch(param[0]);
        Tensor loss = reconstruction_loss(param[0]);
        double lv = loss.value();
        if (!std::isfinite(lv))
            throw ValueError("correct_inversion: non-finite loss at iteration " +
                             std::to_string(i));
        if (lv < best_mse) {
            best_mse = lv;
            best = param[0].detach();
        }
        auto grads = backward(loss, tape);
        std::vector<Tensor> g{grads.grad(param[0])};
        param[0] = param[0].detach();
        adam_step(param, g, state, cfg.lr);
        res.log.push_back({i, lv, counted.calls});
    }

    // the last update was never scored inside the loop
    double last_mse = reconstruction_loss(param[0]).value();
    if (last_mse < best_mse) {
        best_mse = last_mse;
        best = param[0].detach();
    }
    res.log.push_back({cfg.iterations, last_mse, counted.calls});

    if (cfg.keep_best) {
        res.z_p = best;
        res.final_mse = best_mse;
    } else {
        res.z_p = param[0].detach();
        res.final_mse = last_mse;
    }
    res.nfe = counted.calls;
    return res;
}

}  // namespace vdc
