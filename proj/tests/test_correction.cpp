#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "test_util.hpp"
#include "vdc/correction.hpp"
#include "vdc/toy_denoiser.hpp"

using namespace vdc;

namespace {

struct ConstDenoiser final : DenoiserModel {
    double c;
    explicit ConstDenoiser(double v) : c(v) {}
    Tensor eps(const Tensor& z, int, const Tensor*) override { return Tensor(z.shape, c); }
};

// eps = tanh(z W) with a fixed weight matrix, expressed in tape ops so the
// full pathwise gradient exists.
struct TapeMlpDenoiser final : DenoiserModel {
    Tensor w;
    explicit TapeMlpDenoiser(std::size_t d, unsigned long seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> g(0.0, 0.4);
        w = Tensor(Shape{d, d});
        for (auto& v : w.data) v = g(rng);
    }
    Tensor eps(const Tensor& z, int, const Tensor*) override {
        return vdc::tanh(matmul(z, w));
    }
};

GaussianMixtureWorld small_world() {
    GaussianMixtureWorld w;
    w.components.push_back({0.5, {1.0, -0.5, 0.8, 0.2, -1.1, 0.4, 0.9, -0.3}, 0.3});
    w.components.push_back({0.5, {-0.7, 0.9, -0.4, 1.2, 0.5, -0.8, 0.1, 0.7}, 0.3});
    w.validate();
    return w;
}

}  // namespace

TEST_CASE("correct_inversion basics") {
    auto sched = make_schedule(1000, 1e-4, 2e-2, 100);
    std::mt19937_64 rng(7);
    Tensor z0 = testutil::random_tensor(Shape{8}, rng);

    SUBCASE("zero iterations scores but never moves the latent") {
        ConstDenoiser d(0.7);
        auto inv = ddim_invert(z0, 5, sched, d, nullptr);
        CorrectionConfig cfg;
        cfg.iterations = 0;
        auto res = correct_inversion(z0, inv.final_latent(), 5, d, sched, cfg);
        CHECK(max_abs_diff(res.z_p, inv.final_latent()) == 0.0);
        CHECK(res.final_mse == res.initial_mse);
        REQUIRE(res.log.size() == 2);
        CHECK(res.log.front().iteration == -1);
        CHECK(res.nfe == 2 * 5);  // initial and final evaluations
    }

    SUBCASE("constant denoiser: inversion is already exact, correction stays put") {
        ConstDenoiser d(0.7);
        auto inv = ddim_invert(z0, 5, sched, d, nullptr);
        CorrectionConfig cfg;
        cfg.iterations = 10;
        auto res = correct_inversion(z0, inv.final_latent(), 5, d, sched, cfg);
        CHECK(res.initial_mse < 1e-20);
        CHECK(res.final_mse <= res.initial_mse + 1e-20);
        CHECK(max_abs_diff(res.z_p, inv.final_latent()) < 1e-8);
    }

    SUBCASE("argument validation") {
        ConstDenoiser d(0.0);
        CorrectionConfig cfg;
        CHECK_THROWS_AS(correct_inversion(z0, Tensor(Shape{4}), 5, d, sched, cfg), ShapeError);
        CHECK_THROWS_AS(correct_inversion(z0, z0, 0, d, sched, cfg), ValueError);
        CHECK_THROWS_AS(correct_inversion(z0, z0, sched.K() + 1, d, sched, cfg), ValueError);
        cfg.iterations = -1;
        CHECK_THROWS_AS(correct_inversion(z0, z0, 5, d, sched, cfg), ValueError);
    }
}

TEST_CASE("tape gradient of the reconstruction loss matches finite differences") {
    auto sched = make_schedule(1000, 1e-4, 2e-2, 100);
    TapeMlpDenoiser den(8, 3);
    std::mt19937_64 rng(9);
    Tensor z0 = testutil::random_tensor(Shape{8}, rng);
    Tensor zp = testutil::random_tensor(Shape{8}, rng);
    int p = 3;

    auto loss_val = [&](const std::vector<double>& x) {
        Tensor z(Shape{8}, x);
        UnconditionalGuidance g(den);
        auto traj = ddim_sample(z, p, g, sched);
        return mse(traj.final_latent(), z0);
    };

    Tape tape;
    tape.watch(zp);
    UnconditionalGuidance g(den);
    auto traj = ddim_sample(zp, p, g, sched);
    Tensor loss = scale(squared_l2(sub(traj.final_latent(), z0)), 1.0 / 8.0);
    auto grads = backward(loss, tape);
    Tensor an = grads.grad(zp);

    auto fd = testutil::central_diff(loss_val, zp.data);
    for (std::size_t i = 0; i < 8; ++i) CHECK(testutil::rel_err(an.data[i], fd[i]) < 1e-4);
}

TEST_CASE("correction improves a genuinely erroneous inversion") {
    auto sched = make_schedule(1000, 1e-4, 2e-2, 100);
    auto world = small_world();
    ToyDenoiserConfig dcfg;
    std::mt19937_64 rng(dcfg.seed);
    auto model = ToyDenoiser::init(dcfg, sched.T_train, world.components.size(), rng);

    std::mt19937_64 zr(21);
    Tensor z0 = world.sample(zr);
    int p = 5;
    auto inv = ddim_invert(z0, p, sched, model, nullptr);

    CorrectionConfig cfg;
    cfg.iterations = 60;
    auto res = correct_inversion(z0, inv.final_latent(), p, model, sched, cfg);

    CHECK(res.initial_mse > 1e-8);  // naive inversion has real error here
    CHECK(res.final_mse <= res.initial_mse);
    CHECK(res.final_mse < 0.5 * res.initial_mse);

    SUBCASE("keep_best result never loses to any logged iterate") {
        for (const auto& row : res.log) CHECK(res.final_mse <= row.mse);
    }

    SUBCASE("deterministic across reruns") {
        auto res2 = correct_inversion(z0, inv.final_latent(), p, model, sched, cfg);
        CHECK(max_abs_diff(res.z_p, res2.z_p) == 0.0);
        CHECK(res.final_mse == res2.final_mse);
    }

    SUBCASE("NFE log is monotone and totals the evaluation count") {
        long prev = -1;
        for (const auto& row : res.log) {
            CHECK(row.nfe_running > prev);
            prev = row.nfe_running;
        }
        CHECK(res.nfe == static_cast<long>(p) * (cfg.iterations + 2));
    }
}
