#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mc_oracle.hpp"
#include "test_util.hpp"
#include "vdc/ddim.hpp"
#include "vdc/gmm.hpp"

using namespace vdc;

namespace {

GaussianMixtureWorld two_blob_world() {
    GaussianMixtureWorld w;
    w.components.push_back({0.5, {1.5, -0.5, 0.8}, 0.4});
    w.components.push_back({0.5, {-1.0, 1.0, -0.3}, 0.6});
    return w;
}

}  // namespace

TEST_CASE("mixture validation") {
    GaussianMixtureWorld w;
    w.components.push_back({0.6, {0.0}, 1.0});
    w.components.push_back({0.5, {1.0}, 1.0});
    CHECK_THROWS_AS(w.validate(), ValueError);
    w.components[1].weight = 0.4;
    CHECK_NOTHROW(w.validate());
    w.components[0].sigma = -1.0;
    CHECK_THROWS_AS(w.validate(), ValueError);
}

TEST_CASE("point-mass component gives the closed-form eps") {
    auto s = make_schedule(100, 1e-3, 2e-2, 10);
    GaussianMixtureWorld w;
    w.components.push_back({1.0, {0.7, -0.4}, 0.0});
    int t = 50;
    double ab = s.alpha_bar(t);
    Tensor z(Shape{2}, {0.3, 0.9});
    auto eps = analytic_eps(z, t, w, s);
    for (int i = 0; i < 2; ++i) {
        double want = (z.data[i] - std::sqrt(ab) * w.components[0].mean[i]) / std::sqrt(1.0 - ab);
        CHECK(eps.data[i] == doctest::Approx(want).epsilon(1e-14));
    }
}

TEST_CASE("eps vanishes at the scaled mean of a single Gaussian") {
    auto s = make_schedule(100, 1e-3, 2e-2, 10);
    GaussianMixtureWorld w;
    w.components.push_back({1.0, {1.2, 0.5}, 0.7});
    int t = 60;
    double ab = s.alpha_bar(t);
    Tensor z(Shape{2}, {std::sqrt(ab) * 1.2, std::sqrt(ab) * 0.5});
    auto eps = analytic_eps(z, t, w, s);
    CHECK(std::abs(eps.data[0]) < 1e-12);
    CHECK(std::abs(eps.data[1]) < 1e-12);
}

TEST_CASE("timestep range enforced") {
    auto s = make_schedule(100, 1e-3, 2e-2, 10);
    auto w = two_blob_world();
    Tensor z(Shape{3}, 0.0);
    CHECK_THROWS_AS(analytic_eps(z, 0, w, s), ValueError);
    CHECK_THROWS_AS(analytic_eps(z, 101, w, s), ValueError);
    CHECK_THROWS_AS(analytic_eps(Tensor(Shape{2}, 0.0), 10, w, s), ShapeError);
}

TEST_CASE("analytic eps matches the Monte-Carlo posterior estimate") {
    auto s = make_schedule(1000, 1e-4, 2e-2, 100);
    auto w = two_blob_world();
    std::mt19937_64 rng(2024);
    std::mt19937_64 probe_rng(7);
    for (int rep = 0; rep < 6; ++rep) {
        int t = 100 + 150 * rep;
        Tensor z = testutil::random_tensor(Shape{3}, probe_rng, 1.2);
        auto mc = testutil::mc_eps_estimate(z, t, w, s, 200000, rng);
        auto exact = analytic_eps(z, t, w, s);
        for (int i = 0; i < 3; ++i) {
            double se = std::max(mc.stderr_.data[i], 1e-12);
            CHECK(std::abs(exact.data[i] - mc.estimate.data[i]) < 3.5 * se);
        }
    }
}

TEST_CASE("analytic jacobian matches finite differences of analytic eps") {
    auto s = make_schedule(1000, 1e-4, 2e-2, 100);
    auto w = two_blob_world();
    std::mt19937_64 rng(11);
    for (int rep = 0; rep < 4; ++rep) {
        int t = 120 + 200 * rep;
        Tensor z = testutil::random_tensor(Shape{3}, rng, 1.0);
        auto J = analytic_eps_jacobian(z, t, w, s);
        for (int j = 0; j < 3; ++j) {
            Tensor zp = z.detach(), zm = z.detach();
            zp.data[j] += 1e-6;
            zm.data[j] -= 1e-6;
            auto ep = analytic_eps(zp, t, w, s);
            auto em = analytic_eps(zm, t, w, s);
            for (int i = 0; i < 3; ++i) {
                double fd = (ep.data[i] - em.data[i]) / 2e-6;
                CHECK(testutil::rel_err(J[i * 3 + j], fd) < 1e-6);
            }
        }
    }
}

TEST_CASE("full-path sampling with the oracle reproduces mixture moments (smoke)") {
    // Acceptance runs the calibrated version; this is a fast sanity pass.
    auto s = make_schedule(400, 1e-4, 2e-2, 400);
    auto w = two_blob_world();
    AnalyticDenoiser den(w, s);
    std::mt19937_64 rng(31);
    std::normal_distribution<double> g(0.0, 1.0);
    int n = 2000;
    std::vector<double> m(3, 0.0);
    for (int i = 0; i < n; ++i) {
        Tensor z(Shape{3});
        for (auto& v : z.data) v = g(rng);
        UnconditionalGuidance guide(den);
        auto traj = ddim_sample(z, s.K(), guide, s);
        for (int j = 0; j < 3; ++j) m[j] += traj.final_latent().data[j];
    }
    auto want = w.mixture_mean();
    auto cov = w.mixture_cov();
    for (int j = 0; j < 3; ++j) {
        m[j] /= n;
        double se = std::sqrt(cov[j * 3 + j] / n);
        CHECK(std::abs(m[j] - want.data[j]) < 5.0 * se + 0.02);
    }
}

TEST_CASE("conditional world restriction") {
    auto w = two_blob_world();
    auto c0 = conditional_world(w, 0);
    CHECK(c0.components.size() == 1);
    CHECK(c0.components[0].weight == 1.0);
    CHECK(c0.components[0].mean == w.components[0].mean);
    CHECK_THROWS_AS(conditional_world(w, 5), ValueError);
}

TEST_CASE("mixture mean and covariance helpers") {
    GaussianMixtureWorld w;
    w.components.push_back({0.5, {1.0, 0.0}, 1.0});
    w.components.push_back({0.5, {-1.0, 0.0}, 1.0});
    auto m = w.mixture_mean();
    CHECK(m.data[0] == doctest::Approx(0.0));
    auto cov = w.mixture_cov();
    CHECK(cov[0] == doctest::Approx(2.0));  // between (1) + within (1)
    CHECK(cov[3] == doctest::Approx(1.0));
    CHECK(cov[1] == doctest::Approx(0.0));
}
