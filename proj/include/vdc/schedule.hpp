#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "tensor.hpp"

namespace vdc {

/// Diffusion time axis: linear betas, cumulative alpha-bars (alpha_bars[0]=1),
/// and the K-step sampling subsequence ending at T_train.
struct NoiseSchedule {
    int T_train = 0;
    std::vector<double> betas;       // length T_train
    std::vector<double> alpha_bars;  // length T_train + 1
    std::vector<int> sample_steps;   // strictly increasing, last == T_train

    double alpha_bar(int t) const {
        if (t < 0 || t > T_train)
            throw ValueError("alpha_bar: timestep " + std::to_string(t) + " outside [0, " +
                             std::to_string(T_train) + "]");
        return alpha_bars[static_cast<std::size_t>(t)];
    }

    int K() const { return static_cast<int>(sample_steps.size()); }

    /// Position of t within {0} ∪ sample_steps; -1 when absent.
    int chain_index(int t) const {
        if (t == 0) return 0;
        for (std::size_t i = 0; i < sample_steps.size(); ++i)
            if (sample_steps[i] == t) return static_cast<int>(i) + 1;
        return -1;
    }

    /// Timestep at chain position i (0 => t=0, i => sample_steps[i-1]).
    int chain_step(int i) const {
        if (i == 0) return 0;
        return sample_steps[static_cast<std::size_t>(i) - 1];
    }
};

inline NoiseSchedule make_schedule(int T_train, double beta_start, double beta_end, int K) {
    if (T_train < 1) throw ValueError("make_schedule: T_train must be positive");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw ValueError("make_schedule: need 0 < beta_start <= beta_end < 1");
    if (K < 1 || K > T_train)
        throw ValueError("make_schedule: K must be in [1, T_train]");

    NoiseSchedule s;
    s.T_train = T_train;
    s.betas.resize(static_cast<std::size_t>(T_train));
    for (int i = 0; i < T_train; ++i) {
        double frac = T_train == 1 ? 0.0 : static_cast<double>(i) / (T_train - 1);
        s.betas[static_cast<std::size_t>(i)] = beta_start + frac * (beta_end - beta_start);
    }
    s.alpha_bars.resize(static_cast<std::size_t>(T_train) + 1);
    s.alpha_bars[0] = 1.0;
    for (int t = 1; t <= T_train; ++t)
        s.alpha_bars[static_cast<std::size_t>(t)] =
            s.alpha_bars[static_cast<std::size_t>(t) - 1] * (1.0 - s.betas[static_cast<std::size_t>(t) - 1]);

    s.sample_steps.resize(static_cast<std::size_t>(K));
    for (int i = 1; i <= K; ++i) {
        double pos = static_cast<double>(i) * T_train / K;
        s.sample_steps[static_cast<std::size_t>(i) - 1] =
            static_cast<int>(std::llround(pos));
    }
    for (int i = 1; i < K; ++i)
        if (s.sample_steps[static_cast<std::size_t>(i)] <= s.sample_steps[static_cast<std::size_t>(i) - 1])
            throw ValueError("make_schedule: sampling subsequence not strictly increasing");
    if (s.sample_steps.back() != T_train)
        throw ValueError("make_schedule: sampling subsequence must end at T_train");
    return s;
}

/// Closed-form noising: z_t = sqrt(ab_t) z0 + sqrt(1-ab_t) eps.
inline Tensor forward_noise(const Tensor& z0, int t, const Tensor& eps,
                            const NoiseSchedule& sched) {
    if (!same_shape(z0, eps))
        throw ShapeError("forward_noise: z0 " + shape_str(z0.shape) + " vs eps " +
                         shape_str(eps.shape));
    double ab = sched.alpha_bar(t);
    return add(scale(z0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

}  // namespace vdc
