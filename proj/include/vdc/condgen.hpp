#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "autodiff.hpp"
#include "params.hpp"
#include "tensor.hpp"

namespace vdc {

// INR-style steering-condition generators: a small MLP maps Fourier-embedded
// token indices to condition token vectors, one generator per active sampling
// step (or a single shared one, optionally conditioned on the step).

struct FourierFeatureMap {
    std::vector<double> freqs;  // fixed, log-spaced 2^k

    std::size_t out_dim() const { return 2 * freqs.size(); }
};

inline FourierFeatureMap make_fourier_map(std::size_t n_freq) {
    if (n_freq == 0) throw ValueError("make_fourier_map: n_freq must be positive");
    FourierFeatureMap f;
    f.freqs.resize(n_freq);
    for (std::size_t k = 0; k < n_freq; ++k) f.freqs[k] = std::pow(2.0, static_cast<double>(k));
    return f;
}

/// gamma(x) = [sin(2 pi b x), cos(2 pi b x)] over all rows b, x = index / N.
inline Tensor fourier_embed(int index, int n_tokens, const FourierFeatureMap& fmap) {
    if (index < 1 || index > n_tokens)
        throw ValueError("fourier_embed: index " + std::to_string(index) + " outside [1, " +
                         std::to_string(n_tokens) + "]");
    double x = static_cast<double>(index) / static_cast<double>(n_tokens);
    std::size_t nf = fmap.freqs.size();
    Tensor out(Shape{2 * nf});
    for (std::size_t k = 0; k < nf; ++k) {
        out.data[k] = std::sin(2.0 * M_PI * fmap.freqs[k] * x);
        out.data[nf + k] = std::cos(2.0 * M_PI * fmap.freqs[k] * x);
    }
    return out;
}

enum class StackSetup {
    per_step,          // independent generator per active step
    single_shared,     // one generator, step ignored
    step_conditioned,  // one generator, Fourier-embedded t/p appended
    free_tokens,       // no generator: raw token matrices optimized directly
    per_step_text_init  // requires a text encoder; declared unsupported
};

inline std::string setup_name(StackSetup s) {
    switch (s) {
        case StackSetup::per_step: return "per-step";
        case StackSetup::single_shared: return "single-shared";
        case StackSetup::step_conditioned: return "step-conditioned";
        case StackSetup::free_tokens: return "free-tokens";
        case StackSetup::per_step_text_init: return "per-step-text-init";
    }
    return "?";
}

inline StackSetup parse_setup(const std::string& s) {
    if (s == "per-step") return StackSetup::per_step;
    if (s == "single-shared") return StackSetup::single_shared;
    if (s == "step-conditioned") return StackSetup::step_conditioned;
    if (s == "free-tokens") return StackSetup::free_tokens;
    if (s == "per-step-text-init") return StackSetup::per_step_text_init;
    throw ValueError("unknown condition stack setup: " + s);
}

struct StackConfig {
    StackSetup setup = StackSetup::per_step;
    int p = 10;              // active path length
    std::size_t n_tokens = 8;
    std::size_t d_c = 8;
    std::size_t hidden = 32;
    std::size_t n_freq = 6;
};

/// All trainable state for the steering condition: the generators' weights
/// (or free token matrices) plus the fixed Fourier embedding. Zero-init of
/// every final layer makes the fresh stack emit exactly the null condition.
struct ConditionStack {
    StackConfig cfg;
    FourierFeatureMap fourier;
    ParamSet params;
    unsigned long seed = 0;
    // cached constant generator inputs: per-token embeddings (N, in_dim)
    Tensor token_features;

    int n_generators() const {
        switch (cfg.setup) {
            case StackSetup::per_step:
            case StackSetup::free_tokens: return cfg.p;
            default: return 1;
        }
    }

    std::size_t input_dim() const {
        std::size_t base = fourier.out_dim();
        return cfg.setup == StackSetup::step_conditioned ? 2 * base : base;
    }

    /// Trainable parameter count of one generator (reported for parity with
    /// the paper-scale configuration).
    std::size_t params_per_generator() const {
        return params.count() / static_cast<std::size_t>(n_generators());
    }
};

inline ConditionStack init_stack(const StackConfig& cfg, unsigned long seed) {
    if (cfg.setup == StackSetup::per_step_text_init)
        throw ValueError("init_stack: setup 'per-step-text-init' is unsupported (needs a text "
                         "encoder)");
    if (cfg.p < 1) throw ValueError("init_stack: path length must be >= 1");
    ConditionStack st;
    st.cfg = cfg;
    st.seed = seed;
    st.fourier = make_fourier_map(cfg.n_freq);
    std::mt19937_64 rng(seed);

    if (cfg.setup == StackSetup::free_tokens) {
        for (int g = 0; g < cfg.p; ++g)
            st.params.add("tokens" + std::to_string(g),
                          Tensor(Shape{cfg.n_tokens, cfg.d_c}, 0.0));
        return st;
    }

    st.token_features = Tensor(Shape{cfg.n_tokens, st.fourier.out_dim()});
    for (std::size_t tok = 0; tok < cfg.n_tokens; ++tok) {
        Tensor f = fourier_embed(static_cast<int>(tok) + 1, static_cast<int>(cfg.n_tokens),
                                 st.fourier);
        for (std::size_t j = 0; j < f.size(); ++j)
            st.token_features.data[tok * f.size() + j] = f.data[j];
    }

    std::size_t in_dim = st.input_dim();
    for (int g = 0; g < st.n_generators(); ++g) {
        std::string pre = "gen" + std::to_string(g) + "/";
        st.params.add(pre + "w1", xavier_init(in_dim, cfg.hidden, rng));
        st.params.add(pre + "b1", Tensor(Shape{cfg.hidden}, 0.0));
        st.params.add(pre + "w2", xavier_init(cfg.hidden, cfg.hidden, rng));
        st.params.add(pre + "b2", Tensor(Shape{cfg.hidden}, 0.0));
        // zero-init output layer: the initial condition is exactly phi
        st.params.add(pre + "w3", Tensor(Shape{cfg.hidden, cfg.d_c}, 0.0));
        st.params.add(pre + "b3", Tensor(Shape{cfg.d_c}, 0.0));
    }
    return st;
}

/// Emit C^s_t for path step t in [1, p]. Differentiable w.r.t. stack
/// parameters whenever they are watched on a live tape.
inline Tensor generate_condition(const ConditionStack& stack, int t) {
    const auto& cfg = stack.cfg;
    if (t < 1 || t > cfg.p)
        throw ValueError("generate_condition: step " + std::to_string(t) + " outside [1, " +
                         std::to_string(cfg.p) + "]");
    if (cfg.setup == StackSetup::free_tokens)
        return stack.params.at("tokens" + std::to_string(t - 1));

    int g = (cfg.setup == StackSetup::per_step) ? t - 1 : 0;
    std::string pre = "gen" + std::to_string(g) + "/";

    Tensor input;
    if (cfg.setup == StackSetup::step_conditioned) {
        // append the Fourier-embedded normalized step to every token row
        Tensor step_feat(Shape{stack.fourier.out_dim()});
        double x = static_cast<double>(t) / static_cast<double>(cfg.p);
        std::size_t nf = stack.fourier.freqs.size();
        for (std::size_t k = 0; k < nf; ++k) {
            step_feat.data[k] = std::sin(2.0 * M_PI * stack.fourier.freqs[k] * x);
            step_feat.data[nf + k] = std::cos(2.0 * M_PI * stack.fourier.freqs[k] * x);
        }
        std::size_t base = stack.fourier.out_dim();
        input = Tensor(Shape{cfg.n_tokens, 2 * base});
        for (std::size_t tok = 0; tok < cfg.n_tokens; ++tok) {
            for (std::size_t j = 0; j < base; ++j) {
                input.data[tok * 2 * base + j] = stack.token_features.data[tok * base + j];
                input.data[tok * 2 * base + base + j] = step_feat.data[j];
            }
        }
    } else {
        input = stack.token_features;
    }

    Tensor h = vdc::tanh(add(matmul(input, stack.params.at(pre + "w1")),
                             stack.params.at(pre + "b1")));
    h = vdc::tanh(add(matmul(h, stack.params.at(pre + "w2")), stack.params.at(pre + "b2")));
    return add(matmul(h, stack.params.at(pre + "w3")), stack.params.at(pre + "b3"));
}

}  // namespace vdc
