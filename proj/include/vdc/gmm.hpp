#pragma once

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "ddim.hpp"
#include "schedule.hpp"
#include "tensor.hpp"

namespace vdc {

/// Isotropic Gaussian mixture over latent space. Serves as the analytically
/// solvable stand-in for a pretrained backbone: the exact eps oracle below
/// makes every sampler/steering identity checkable in closed form.
struct MixtureComponent {
    double weight = 1.0;
    std::vector<double> mean;
    double sigma = 0.0;  // 0 allowed: point mass
};

struct GaussianMixtureWorld {
    std::vector<MixtureComponent> components;

    std::size_t dim() const { return components.empty() ? 0 : components[0].mean.size(); }

    void validate() const {
        if (components.empty()) throw ValueError("mixture: no components");
        double wsum = 0.0;
        for (const auto& c : components) {
            if (!(c.weight > 0.0)) throw ValueError("mixture: weights must be positive");
            if (c.sigma < 0.0) throw ValueError("mixture: sigma must be >= 0");
            if (c.mean.size() != dim()) throw ShapeError("mixture: inconsistent component dims");
            wsum += c.weight;
        }
        if (std::abs(wsum - 1.0) > 1e-12)
            throw ValueError("mixture: weights sum to " + std::to_string(wsum) + ", expected 1");
    }

    Tensor sample(std::mt19937_64& rng) const {
        std::uniform_real_distribution<double> u(0.0, 1.0);
        double r = u(rng), acc = 0.0;
        const MixtureComponent* pick = &components.back();
        for (const auto& c : components) {
            acc += c.weight;
            if (r <= acc) {
                pick = &c;
                break;
            }
        }
        std::normal_distribution<double> g(0.0, 1.0);
        Tensor x(Shape{dim()});
        for (std::size_t i = 0; i < dim(); ++i) x.data[i] = pick->mean[i] + pick->sigma * g(rng);
        return x;
    }

    Tensor mixture_mean() const {
        Tensor m(Shape{dim()}, 0.0);
        for (const auto& c : components)
            for (std::size_t i = 0; i < dim(); ++i) m.data[i] += c.weight * c.mean[i];
        return m;
    }

    /// Full covariance of the mixture (between-component + within-component).
    std::vector<double> mixture_cov() const {
        std::size_t d = dim();
        Tensor m = mixture_mean();
        std::vector<double> cov(d * d, 0.0);
        for (const auto& c : components) {
            for (std::size_t i = 0; i < d; ++i) {
                for (std::size_t j = 0; j < d; ++j)
                    cov[i * d + j] +=
                        c.weight * (c.mean[i] - m.data[i]) * (c.mean[j] - m.data[j]);
                cov[i * d + i] += c.weight * c.sigma * c.sigma;
            }
        }
        return cov;
    }
};

namespace detail {

struct PosteriorStats {
    std::vector<double> resp;      // responsibilities r_k(z)
    std::vector<double> shrink;    // c_k = sqrt(ab) sigma^2 / (ab sigma^2 + 1 - ab)
    std::vector<double> x0_mean;   // E[x0 | z, t], length d
};

inline PosteriorStats posterior_x0(const Tensor& z, double ab,
                                   const GaussianMixtureWorld& world) {
    std::size_t d = world.dim();
    std::size_t K = world.components.size();
    double sab = std::sqrt(ab);
    PosteriorStats st;
    st.resp.resize(K);
    st.shrink.resize(K);
    std::vector<double> logw(K);
    for (std::size_t k = 0; k < K; ++k) {
        const auto& c = world.components[k];
        double var = ab * c.sigma * c.sigma + (1.0 - ab);
        if (var <= 0.0) {
            // ab == 1 with a point mass: z must coincide with the mean
            double dist = 0.0;
            for (std::size_t i = 0; i < d; ++i) {
                double r = z.data[i] - sab * c.mean[i];
                dist += r * r;
            }
            if (dist > 0.0)
                throw ValueError("analytic_eps: degenerate marginal (ab=1, sigma=0) with z off "
                                 "the point mass");
            var = 1e-300;
        }
        double q = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            double r = z.data[i] - sab * c.mean[i];
            q += r * r;
        }
        logw[k] = std::log(c.weight) - 0.5 * q / var -
                  0.5 * static_cast<double>(d) * std::log(var);
        st.shrink[k] = sab * c.sigma * c.sigma / var;
    }
    double lmax = logw[0];
    for (double v : logw) lmax = std::max(lmax, v);
    double norm = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        st.resp[k] = std::exp(logw[k] - lmax);
        norm += st.resp[k];
    }
    for (auto& r : st.resp) r /= norm;

    st.x0_mean.assign(d, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        const auto& c = world.components[k];
        for (std::size_t i = 0; i < d; ++i) {
            double mu_post = c.mean[i] + st.shrink[k] * (z.data[i] - sab * c.mean[i]);
            st.x0_mean[i] += st.resp[k] * mu_post;
        }
    }
    return st;
}

}  // namespace detail

/// Exact eps oracle: eps*(z,t) = (z - sqrt(ab_t) E[x0|z,t]) / sqrt(1-ab_t).
inline Tensor analytic_eps(const Tensor& z, int t, const GaussianMixtureWorld& world,
                           const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T_train)
        throw ValueError("analytic_eps: timestep " + std::to_string(t) + " outside [1, " +
                         std::to_string(sched.T_train) + "]");
    if (z.shape != Shape{world.dim()})
        throw ShapeError("analytic_eps: z shape " + shape_str(z.shape) + " vs world dim " +
                         std::to_string(world.dim()));
    double ab = sched.alpha_bar(t);
    auto st = detail::posterior_x0(z, ab, world);
    double sab = std::sqrt(ab);
    double s1m = std::sqrt(1.0 - ab);
    Tensor eps(z.shape);
    for (std::size_t i = 0; i < z.data.size(); ++i)
        eps.data[i] = (z.data[i] - sab * st.x0_mean[i]) / s1m;
    return eps;
}

/// Closed-form Jacobian d eps* / d z, row-major d x d. Used as the smoothness
/// oracle against finite differences of analytic_eps.
inline std::vector<double> analytic_eps_jacobian(const Tensor& z, int t,
                                                 const GaussianMixtureWorld& world,
                                                 const NoiseSchedule& sched) {
    double ab = sched.alpha_bar(t);
    double sab = std::sqrt(ab);
    double s1m = std::sqrt(1.0 - ab);
    std::size_t d = world.dim();
    std::size_t K = world.components.size();
    auto st = detail::posterior_x0(z, ab, world);

    // g_k = grad_z log N(z; sqrt(ab) mu_k, var_k I) = -(z - sqrt(ab) mu_k) / var_k
    std::vector<std::vector<double>> gk(K, std::vector<double>(d));
    std::vector<double> gbar(d, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        const auto& c = world.components[k];
        double var = ab * c.sigma * c.sigma + (1.0 - ab);
        for (std::size_t i = 0; i < d; ++i) {
            gk[k][i] = -(z.data[i] - sab * c.mean[i]) / var;
            gbar[i] += st.resp[k] * gk[k][i];
        }
    }
    // dm/dz = sum_k [ r_k c_k I + mu_hat_k (dr_k/dz)^T ], dr_k/dz = r_k (g_k - gbar)
    std::vector<double> dm(d * d, 0.0);
    for (std::size_t k = 0; k < K; ++k) {
        const auto& c = world.components[k];
        for (std::size_t i = 0; i < d; ++i) {
            double mu_post = c.mean[i] + st.shrink[k] * (z.data[i] - sab * c.mean[i]);
            for (std::size_t j = 0; j < d; ++j)
                dm[i * d + j] += mu_post * st.resp[k] * (gk[k][j] - gbar[j]);
            dm[i * d + i] += st.resp[k] * st.shrink[k];
        }
    }
    std::vector<double> J(d * d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            double id = (i == j) ? 1.0 : 0.0;
            J[i * d + j] = (id - sab * dm[i * d + j]) / s1m;
        }
    return J;
}

/// Denoiser adapter over the oracle. `cond` selects nothing here: the analytic
/// world is unconditional; a conditional oracle is just analytic_eps over a
/// sub-mixture.
struct AnalyticDenoiser final : DenoiserModel {
    const GaussianMixtureWorld& world;
    const NoiseSchedule& sched;
    AnalyticDenoiser(const GaussianMixtureWorld& w, const NoiseSchedule& s)
        : world(w), sched(s) {}
    Tensor eps(const Tensor& z, int t, const Tensor*) override {
        return analytic_eps(z, t, world, sched);
    }
};

/// Restrict the mixture to one component (the class-conditional world).
inline GaussianMixtureWorld conditional_world(const GaussianMixtureWorld& world,
                                              std::size_t component) {
    if (component >= world.components.size())
        throw ValueError("conditional_world: component index out of range");
    GaussianMixtureWorld w;
    w.components.push_back(world.components[component]);
    w.components[0].weight = 1.0;
    return w;
}

}  // namespace vdc
