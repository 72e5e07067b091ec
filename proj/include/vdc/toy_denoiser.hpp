#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "ddim.hpp"
#include "gmm.hpp"
#include "optim.hpp"
#include "params.hpp"
#include "schedule.hpp"
#include "tensor.hpp"

namespace vdc {

/// Small conditional MLP denoiser: eps(z, t, C) with a sinusoidal time
/// embedding and a mean-pooled condition pathway. The null condition is the
/// all-zeros token matrix; training drops the class condition to zeros with
/// probability `dropout_prob`, so the null branch is a genuine unconditional
/// model.
struct ToyDenoiserConfig {
    std::size_t d_z = 8;
    std::size_t n_tokens = 8;
    std::size_t d_c = 8;
    std::size_t hidden = 64;
    std::size_t time_dim = 16;  // even
    std::size_t d_pool = 16;
    long train_steps = 20000;
    std::size_t batch = 64;
    double lr = 1e-3;
    double dropout_prob = 0.5;
    unsigned long seed = 17;
};

class ToyDenoiser final : public DenoiserModel {
public:
    ToyDenoiserConfig cfg;
    ParamSet params;
    int T_train = 0;
    /// Fixed per-component class conditions (N x d_c), drawn once at init.
    std::vector<Tensor> class_conditions;

    ToyDenoiser() = default;

    static ToyDenoiser init(const ToyDenoiserConfig& cfg, int T_train, std::size_t n_components,
                            std::mt19937_64& rng) {
        ToyDenoiser d;
        d.cfg = cfg;
        d.T_train = T_train;
        d.params.add("w_z", xavier_init(cfg.d_z, cfg.hidden, rng));
        d.params.add("w_t", xavier_init(cfg.time_dim, cfg.hidden, rng));
        d.params.add("w_c", xavier_init(cfg.d_pool, cfg.hidden, rng));
        d.params.add("b_1", Tensor(Shape{cfg.hidden}, 0.0));
        d.params.add("w_2", xavier_init(cfg.hidden, cfg.hidden, rng));
        d.params.add("b_2", Tensor(Shape{cfg.hidden}, 0.0));
        d.params.add("w_3", xavier_init(cfg.hidden, cfg.hidden, rng));
        d.params.add("b_3", Tensor(Shape{cfg.hidden}, 0.0));
        d.params.add("w_o", xavier_init(cfg.hidden, cfg.d_z, rng));
        d.params.add("b_o", Tensor(Shape{cfg.d_z}, 0.0));
        d.params.add("pool", xavier_init(cfg.d_c, cfg.d_pool, rng));
        for (std::size_t k = 0; k < n_components; ++k)
            d.class_conditions.push_back(
                random_init(Shape{cfg.n_tokens, cfg.d_c}, rng, 1.0));
        return d;
    }

    Tensor time_embedding(int t) const {
        std::size_t half = cfg.time_dim / 2;
        Tensor e(Shape{cfg.time_dim});
        double tau = static_cast<double>(t) / static_cast<double>(T_train);
        for (std::size_t k = 0; k < half; ++k) {
            double f = std::pow(2.0, static_cast<double>(k));
            e.data[k] = std::sin(2.0 * M_PI * f * tau);
            e.data[half + k] = std::cos(2.0 * M_PI * f * tau);
        }
        return e;
    }

    /// Single-sample forward. cond == nullptr means the all-zeros condition.
    Tensor eps(const Tensor& z, int t, const Tensor* cond) override {
        if (z.shape != Shape{cfg.d_z})
            throw ShapeError("toy denoiser: z " + shape_str(z.shape) + " vs latent dim " +
                             std::to_string(cfg.d_z));
        Tensor pooled;
        if (cond) {
            if (cond->shape != Shape{cfg.n_tokens, cfg.d_c})
                throw ShapeError("toy denoiser: condition " + shape_str(cond->shape) +
                                 " vs expected " + shape_str(Shape{cfg.n_tokens, cfg.d_c}));
            Tensor mean_weights(Shape{cfg.n_tokens}, 1.0 / static_cast<double>(cfg.n_tokens));
            pooled = matmul(mean_weights, *cond);  // (d_c)
        } else {
            pooled = Tensor(Shape{cfg.d_c}, 0.0);
        }
        Tensor pc = matmul(pooled, params.at("pool"));  // (d_pool)
        Tensor e = time_embedding(t);
        Tensor h = vdc::tanh(add(
            add(add(matmul(z, params.at("w_z")), matmul(e, params.at("w_t"))),
                matmul(pc, params.at("w_c"))),
            params.at("b_1")));
        h = vdc::tanh(add(matmul(h, params.at("w_2")), params.at("b_2")));
        h = vdc::tanh(add(matmul(h, params.at("w_3")), params.at("b_3")));
        return add(matmul(h, params.at("w_o")), params.at("b_o"));
    }

    /// Batched forward used by training: z (B, d_z), e (B, time_dim),
    /// pooled (B, d_c) precomputed off-tape.
    Tensor eps_batch(const Tensor& z, const Tensor& e, const Tensor& pooled) {
        Tensor pc = matmul(pooled, params.at("pool"));
        Tensor h = vdc::tanh(add(
            add(add(matmul(z, params.at("w_z")), matmul(e, params.at("w_t"))),
                matmul(pc, params.at("w_c"))),
            params.at("b_1")));
        h = vdc::tanh(add(matmul(h, params.at("w_2")), params.at("b_2")));
        h = vdc::tanh(add(matmul(h, params.at("w_3")), params.at("b_3")));
        return add(matmul(h, params.at("w_o")), params.at("b_o"));
    }
};

struct TrainLogRow {
    long step;
    double loss;
};

/// Denoising score matching over the mixture with class-condition dropout.
/// Aborts with the offending step index when the loss turns non-finite.
inline std::vector<TrainLogRow> train_toy_denoiser(ToyDenoiser& model,
                                                   const GaussianMixtureWorld& world,
                                                   const NoiseSchedule& sched) {
    world.validate();
    const auto& cfg = model.cfg;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<int> tdist(1, sched.T_train);
    std::normal_distribution<double> gauss(0.0, 1.0);

    auto state = AdamState::init(model.params.values);
    std::vector<TrainLogRow> log;
    std::size_t B = cfg.batch;
    std::size_t d = cfg.d_z;

    for (long step = 0; step < cfg.train_steps; ++step) {
        // assemble batch off-tape
        Tensor zb(Shape{B, d});
        Tensor eb(Shape{B, cfg.time_dim});
        Tensor pooled(Shape{B, cfg.d_c}, 0.0);
        Tensor target(Shape{B, d});
        for (std::size_t b = 0; b < B; ++b) {
            // component pick mirrors world.sample but keeps the index
            double r = u(rng), acc = 0.0;
            std::size_t k = world.components.size() - 1;
            for (std::size_t c = 0; c < world.components.size(); ++c) {
                acc += world.components[c].weight;
                if (r <= acc) {
                    k = c;
                    break;
                }
            }
            const auto& comp = world.components[k];
            int t = tdist(rng);
            double ab = sched.alpha_bar(t);
            for (std::size_t i = 0; i < d; ++i) {
                double x0 = comp.mean[i] + comp.sigma * gauss(rng);
                double epsv = gauss(rng);
                zb.data[b * d + i] = std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * epsv;
                target.data[b * d + i] = epsv;
            }
            Tensor e = model.time_embedding(t);
            for (std::size_t i = 0; i < cfg.time_dim; ++i)
                eb.data[b * cfg.time_dim + i] = e.data[i];
            bool drop = u(rng) < cfg.dropout_prob;
            if (!drop && k < model.class_conditions.size()) {
                const Tensor& c = model.class_conditions[k];
                for (std::size_t j = 0; j < cfg.d_c; ++j) {
                    double m = 0.0;
                    for (std::size_t tok = 0; tok < cfg.n_tokens; ++tok)
                        m += c.data[tok * cfg.d_c + j];
                    pooled.data[b * cfg.d_c + j] = m / static_cast<double>(cfg.n_tokens);
                }
            }
        }

        Tape tape;
        model.params.watch_all(tape);
        Tensor pred = model.eps_batch(zb, eb, pooled);
        Tensor loss = scale(squared_l2(sub(pred, target)), 1.0 / static_cast<double>(B * d));
        double lv = loss.value();
        if (!std::isfinite(lv))
            throw ValueError("train_toy_denoiser: non-finite loss at step " +
                             std::to_string(step));
        auto grads = backward(loss, tape);
        auto gvec = model.params.grads(grads);
        model.params.detach_all();
        adam_step(model.params.values, gvec, state, cfg.lr, &model.params.names);
        if (step % 100 == 0 || step == cfg.train_steps - 1) log.push_back({step, lv});
    }
    model.params.detach_all();
    return log;
}

struct OracleEval {
    double mse_uncond = 0.0;
    double mse_cond = 0.0;
    double cond_uncond_gap = 0.0;  // L2 distance between branches over the probe set
};

/// Held-out comparison against the analytic oracle: unconditional branch vs
/// the full mixture, conditional branch vs each component's sub-mixture.
inline OracleEval evaluate_vs_oracle(ToyDenoiser& model, const GaussianMixtureWorld& world,
                                     const NoiseSchedule& sched, std::size_t n_probes,
                                     unsigned long seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> tdist(1, sched.T_train);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> kdist(0, world.components.size() - 1);

    OracleEval ev;
    std::size_t d = world.dim();
    double gap = 0.0;
    for (std::size_t p = 0; p < n_probes; ++p) {
        std::size_t k = kdist(rng);
        auto subw = conditional_world(world, k);
        int t = tdist(rng);
        double ab = sched.alpha_bar(t);
        Tensor x0 = subw.sample(rng);
        Tensor z(Shape{d});
        for (std::size_t i = 0; i < d; ++i)
            z.data[i] = std::sqrt(ab) * x0.data[i] + std::sqrt(1.0 - ab) * gauss(rng);

        Tensor pred_u = model.eps(z, t, nullptr);
        Tensor exact_u = analytic_eps(z, t, world, sched);
        ev.mse_uncond += mse(pred_u, exact_u);

        const Tensor& cond = model.class_conditions[k];
        Tensor pred_c = model.eps(z, t, &cond);
        Tensor exact_c = analytic_eps(z, t, subw, sched);
        ev.mse_cond += mse(pred_c, exact_c);

        gap += std::sqrt(squared_l2(sub(pred_c, pred_u)).value());
    }
    ev.mse_uncond /= static_cast<double>(n_probes);
    ev.mse_cond /= static_cast<double>(n_probes);
    ev.cond_uncond_gap = gap / static_cast<double>(n_probes);
    return ev;
}

}  // namespace vdc
