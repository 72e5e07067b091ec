#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "autodiff.hpp"
#include "codec.hpp"
#include "condgen.hpp"
#include "correction.hpp"
#include "ddim.hpp"
#include "optim.hpp"
#include "steering.hpp"
#include "tasks.hpp"
#include "tensor.hpp"

namespace vdc {

// Steering-condition optimization: fit the condition stack so that inverting
// a degraded latent and running the steered sampler lands on the clean
// counterpart, in latent space and through the decoder in pixel space.

struct OptimizerConfig {
    long iterations = 200;
    std::size_t batch_size = 4;
    double p_fraction = 0.10;  // active suffix as a fraction of the chain
    SteeringConfig steering{7.0, SteerDirection::remove};
    CosineSchedule lr;  // 5e-3 -> 1e-3 over `iterations`
    double latent_weight = 1.0;
    double pixel_weight = 1.0;
    bool use_augmentation = true;
    bool use_pixel_loss = true;
    bool use_steering = true;
    bool correct_inversions = false;
    CorrectionConfig correction;
    unsigned long seed = 17;
};

inline int active_suffix(const OptimizerConfig& cfg, const NoiseSchedule& sched) {
    if (cfg.p_fraction <= 0.0 || cfg.p_fraction > 1.0)
        throw ValueError("active_suffix: p_fraction must lie in (0, 1]");
    int p = static_cast<int>(std::lround(cfg.p_fraction * static_cast<double>(sched.K())));
    return std::max(1, p);
}

struct LossParts {
    Tensor latent;
    Tensor pixel;
    Tensor total;
};

/// L = w_lat |Z0 - Z_A|^2 + w_pix |D(Z0) - R_A|^2 (pixel term optional).
inline LossParts combined_loss(const Tensor& z0, const ExamplePair& pair, const ToyCodec& codec,
                               const OptimizerConfig& cfg) {
    LossParts out;
    out.latent = squared_l2(sub(z0, pair.Z_A));
    if (cfg.use_pixel_loss) {
        out.pixel = squared_l2(sub(decode(z0, codec), pair.R_A));
        out.total = add(scale(out.latent, cfg.latent_weight), scale(out.pixel, cfg.pixel_weight));
    } else {
        out.pixel = Tensor::scalar(0.0);
        out.total = scale(out.latent, cfg.latent_weight);
    }
    return out;
}

struct OptLogRow {
    long iteration;
    double lr;
    double latent_loss;
    double pixel_loss;
    double total_loss;
};

struct OptimizeResult {
    std::vector<OptLogRow> log;
    long nfe = 0;
    double initial_loss = 0.0;
    double final_loss = 0.0;
};

/// Fit `stack` on the example pairs. The inversion that supplies each
/// starting latent runs off-tape under the null condition: gradients flow
/// only through the steered rollout. Without augmentation the inversions are
/// computed once per example and reused every iteration.
inline OptimizeResult optimize_steering_condition(ConditionStack& stack, DenoiserModel& denoiser,
                                                  const std::vector<ExamplePair>& pairs,
                                                  const ToyCodec& codec,
                                                  const NoiseSchedule& sched,
                                                  const AugmentationPolicy& policy,
                                                  const OptimizerConfig& cfg) {
    if (pairs.empty()) throw ValueError("optimize_steering_condition: no example pairs");
    if (cfg.batch_size == 0) throw ValueError("optimize_steering_condition: empty batch");
    int p = active_suffix(cfg, sched);
    if (p != stack.cfg.p)
        throw ValueError("optimize_steering_condition: stack built for p=" +
                         std::to_string(stack.cfg.p) + " but schedule suffix is " +
                         std::to_string(p));

    CountingDenoiser counted(denoiser);
    std::mt19937_64 rng(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, pairs.size() - 1);

    auto invert_pair = [&](const ExamplePair& ex) {
        Tensor z_p = ddim_invert(ex.Z_B, p, sched, counted, nullptr).final_latent().detach();
        if (cfg.correct_inversions) {
            auto corr = correct_inversion(ex.Z_B, z_p, p, counted, sched, cfg.correction);
            z_p = corr.z_p;
        }
        return z_p;
    };

    // inversion cache for the un-augmented pairs
    std::vector<Tensor> cached;
    if (!cfg.use_augmentation) {
        cached.reserve(pairs.size());
        for (const auto& ex : pairs) cached.push_back(invert_pair(ex));
    }

    CosineSchedule lr_sched = cfg.lr;
    lr_sched.total_steps = cfg.iterations;

    auto state = AdamState::init(stack.params.values);
    OptimizeResult res;
    for (long it = 0; it < cfg.iterations; ++it) {
        // assemble the batch: sampled example, fresh augmentation realization
        std::vector<ExamplePair> batch;
        std::vector<Tensor> starts;
        batch.reserve(cfg.batch_size);
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            std::size_t idx = pick(rng);
            if (cfg.use_augmentation) {
                batch.push_back(augment(pairs[idx], policy, rng, codec));
                starts.push_back(invert_pair(batch.back()));
            } else {
                batch.push_back(pairs[idx]);
                starts.push_back(cached[idx]);
            }
        }

        Tape tape;
        stack.params.watch_all(tape);
        double inv_b = 1.0 / static_cast<double>(cfg.batch_size);
        Tensor latent_sum = Tensor::scalar(0.0);
        Tensor pixel_sum = Tensor::scalar(0.0);
        Tensor total_sum = Tensor::scalar(0.0);
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            Tensor z0;
            if (cfg.use_steering) {
                SteeringGuidance guide(counted, stack, cfg.steering);
                z0 = ddim_sample(starts[b], p, guide, sched).final_latent();
            } else {
                UnconditionalGuidance guide(counted);
                z0 = ddim_sample(starts[b], p, guide, sched).final_latent();
            }
            LossParts parts = combined_loss(z0, batch[b], codec, cfg);
            latent_sum = add(latent_sum, scale(parts.latent, inv_b));
            pixel_sum = add(pixel_sum, scale(parts.pixel, inv_b));
            total_sum = add(total_sum, scale(parts.total, inv_b));
        }
        double total = total_sum.value();
        if (!std::isfinite(total))
            throw ValueError("optimize_steering_condition: non-finite loss at iteration " +
                             std::to_string(it));
        double lr = cosine_lr(it, lr_sched);
        res.log.push_back({it, lr, latent_sum.value(), pixel_sum.value(), total});
        if (it == 0) res.initial_loss = total;

        auto grads = backward(total_sum, tape);
        auto gvec = stack.params.grads(grads);
        stack.params.detach_all();
        adam_step(stack.params.values, gvec, state, lr, &stack.params.names);
    }
    stack.params.detach_all();
    res.final_loss = res.log.empty() ? 0.0 : res.log.back().total_loss;
    res.nfe = counted.calls;
    return res;
}

struct EditResult {
    Tensor R_edit;
    Tensor Z_edit;
    long nfe_inversion = 0;
    long nfe_sampling = 0;

    long nfe_total() const { return nfe_inversion + nfe_sampling; }
};

/// Apply a fitted stack to a new degraded image: encode, invert to the active
/// suffix under the null condition, run the steered sampler, decode.
inline EditResult apply_edit(const Tensor& R_B, const ConditionStack& stack,
                             DenoiserModel& denoiser, const ToyCodec& codec,
                             const NoiseSchedule& sched, const OptimizerConfig& cfg) {
    int p = active_suffix(cfg, sched);
    if (p != stack.cfg.p)
        throw ValueError("apply_edit: stack built for p=" + std::to_string(stack.cfg.p) +
                         " but schedule suffix is " + std::to_string(p));
    Tensor z_b = encode(R_B, codec);

    CountingDenoiser inv_counted(denoiser);
    Tensor z_p = ddim_invert(z_b, p, sched, inv_counted, nullptr).final_latent().detach();
    long nfe_inv = inv_counted.calls;
    if (cfg.correct_inversions) {
        auto corr = correct_inversion(z_b, z_p, p, inv_counted, sched, cfg.correction);
        z_p = corr.z_p;
        nfe_inv = inv_counted.calls;
    }

    EditResult out;
    out.nfe_inversion = nfe_inv;
    if (cfg.use_steering) {
        SteeringGuidance guide(denoiser, stack, cfg.steering);
        out.Z_edit = ddim_sample(z_p, p, guide, sched).final_latent().detach();
        out.nfe_sampling = guide.nfe();
    } else {
        UnconditionalGuidance guide(denoiser);
        out.Z_edit = ddim_sample(z_p, p, guide, sched).final_latent().detach();
        out.nfe_sampling = guide.nfe();
    }
    out.R_edit = decode(out.Z_edit, codec).detach();
    return out;
}

}  // namespace vdc
