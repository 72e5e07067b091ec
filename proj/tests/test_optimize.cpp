#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "test_util.hpp"
#include "vdc/optimize.hpp"
#include "vdc/toy_denoiser.hpp"

using namespace vdc;

namespace {

struct Fixture {
    GaussianMixtureWorld world;
    NoiseSchedule sched;
    ToyCodec codec;
    ToyDenoiser model;
    EditTask task;
    AugmentationPolicy policy;
    std::vector<ExamplePair> pairs;

    explicit Fixture(TaskKind kind = TaskKind::shift, std::size_t n_pairs = 2)
        : sched(make_schedule(1000, 1e-4, 2e-2, 100)), codec(make_codec(8, 16, 7)) {
        world.components.push_back({0.5, {1.0, -0.5, 0.8, 0.2, -1.1, 0.4, 0.9, -0.3}, 0.3});
        world.components.push_back({0.5, {-0.7, 0.9, -0.4, 1.2, 0.5, -0.8, 0.1, 0.7}, 0.3});
        world.validate();
        std::mt19937_64 rng(17);
        model = ToyDenoiser::init(ToyDenoiserConfig{}, sched.T_train, world.components.size(),
                                  rng);
        task = make_edit_task(kind, world, codec);
        policy = make_policy({AugOp::flip, AugOp::permute}, codec.d_x, 9);
        validate_policy(task, policy);
        std::mt19937_64 prng(23);
        pairs = make_pairs(task, world, codec, n_pairs, prng);
    }

    ConditionStack fresh_stack(const OptimizerConfig& cfg) const {
        StackConfig scfg;
        scfg.p = active_suffix(cfg, sched);
        scfg.n_tokens = model.cfg.n_tokens;
        scfg.d_c = model.cfg.d_c;
        return init_stack(scfg, 42);
    }
};

}  // namespace

TEST_CASE("combined loss separates latent and pixel disagreement") {
    auto codec = make_codec(8, 16, 7);
    OptimizerConfig cfg;
    std::mt19937_64 rng(3);
    Tensor z0 = testutil::random_tensor(Shape{8}, rng);

    ExamplePair pair;
    pair.Z_A = z0.detach();
    pair.R_A = decode(z0, codec);

    SUBCASE("perfect match gives zero everywhere") {
        auto parts = combined_loss(z0, pair, codec, cfg);
        CHECK(parts.latent.value() < 1e-20);
        CHECK(parts.pixel.value() < 1e-20);
        CHECK(parts.total.value() < 1e-20);
    }

    SUBCASE("a null-space pixel offset is invisible to the latent term") {
        // build a pixel vector the encoder annihilates
        Tensor x = testutil::random_tensor(Shape{16}, rng);
        Tensor proj = decode(encode(x, codec), codec);
        Tensor null_part = sub(x, proj);
        REQUIRE(squared_l2(null_part).value() > 1e-3);
        pair.R_A = add(pair.R_A, null_part);
        auto parts = combined_loss(z0, pair, codec, cfg);
        CHECK(parts.latent.value() < 1e-20);
        CHECK(parts.pixel.value() > 1e-3);
        CHECK(parts.total.value() == doctest::Approx(parts.pixel.value()));
    }

    SUBCASE("disabling the pixel loss drops the term") {
        cfg.use_pixel_loss = false;
        pair.R_A = add(pair.R_A, Tensor(Shape{16}, 1.0));
        auto parts = combined_loss(z0, pair, codec, cfg);
        CHECK(parts.pixel.value() == 0.0);
        CHECK(parts.total.value() == doctest::Approx(parts.latent.value()));
    }

    SUBCASE("weights scale their terms") {
        cfg.latent_weight = 2.0;
        cfg.pixel_weight = 0.5;
        Tensor off = add(z0, Tensor(Shape{8}, 0.1));
        auto parts = combined_loss(off, pair, codec, cfg);
        CHECK(parts.total.value() ==
              doctest::Approx(2.0 * parts.latent.value() + 0.5 * parts.pixel.value()));
    }
}

TEST_CASE("active_suffix maps the fraction onto the chain") {
    auto sched = make_schedule(1000, 1e-4, 2e-2, 100);
    OptimizerConfig cfg;
    CHECK(active_suffix(cfg, sched) == 10);
    cfg.p_fraction = 0.05;
    CHECK(active_suffix(cfg, sched) == 5);
    cfg.p_fraction = 0.003;
    CHECK(active_suffix(cfg, sched) == 1);  // clamped to at least one step
    cfg.p_fraction = 0.0;
    CHECK_THROWS_AS(active_suffix(cfg, sched), ValueError);
    cfg.p_fraction = 1.5;
    CHECK_THROWS_AS(active_suffix(cfg, sched), ValueError);
}

TEST_CASE("optimize_steering_condition") {
    Fixture fx;

    SUBCASE("zero iterations leaves the stack untouched") {
        OptimizerConfig cfg;
        cfg.iterations = 0;
        cfg.use_augmentation = false;
        auto stack = fx.fresh_stack(cfg);
        auto before = stack.params.values;
        auto res = optimize_steering_condition(stack, fx.model, fx.pairs, fx.codec, fx.sched,
                                               fx.policy, cfg);
        CHECK(res.log.empty());
        for (std::size_t i = 0; i < before.size(); ++i)
            CHECK(max_abs_diff(before[i], stack.params.values[i]) == 0.0);
        // only the cached inversions were computed
        CHECK(res.nfe == static_cast<long>(fx.pairs.size()) * 10);
    }

    SUBCASE("one iteration moves the zero-init output layers") {
        OptimizerConfig cfg;
        cfg.iterations = 1;
        cfg.use_augmentation = false;
        auto stack = fx.fresh_stack(cfg);
        optimize_steering_condition(stack, fx.model, fx.pairs, fx.codec, fx.sched, fx.policy,
                                    cfg);
        double moved = 0.0;
        for (int g = 0; g < stack.n_generators(); ++g) {
            const Tensor& w3 = stack.params.at("gen" + std::to_string(g) + "/w3");
            for (double v : w3.data) moved = std::max(moved, std::abs(v));
        }
        CHECK(moved > 0.0);
    }

    SUBCASE("a short run reduces the training loss") {
        OptimizerConfig cfg;
        cfg.iterations = 40;
        cfg.use_augmentation = false;
        auto stack = fx.fresh_stack(cfg);
        auto res = optimize_steering_condition(stack, fx.model, fx.pairs, fx.codec, fx.sched,
                                               fx.policy, cfg);
        REQUIRE(res.log.size() == 40);
        CHECK(res.final_loss < res.initial_loss);
        CHECK(res.log.front().lr == doctest::Approx(5e-3));
        for (const auto& row : res.log) {
            CHECK(std::isfinite(row.total_loss));
            CHECK(row.total_loss ==
                  doctest::Approx(row.latent_loss + row.pixel_loss).epsilon(1e-9));
        }
    }

    SUBCASE("runs are deterministic") {
        OptimizerConfig cfg;
        cfg.iterations = 5;
        auto s1 = fx.fresh_stack(cfg);
        auto s2 = fx.fresh_stack(cfg);
        auto r1 = optimize_steering_condition(s1, fx.model, fx.pairs, fx.codec, fx.sched,
                                              fx.policy, cfg);
        auto r2 = optimize_steering_condition(s2, fx.model, fx.pairs, fx.codec, fx.sched,
                                              fx.policy, cfg);
        REQUIRE(r1.log.size() == r2.log.size());
        for (std::size_t i = 0; i < r1.log.size(); ++i)
            CHECK(r1.log[i].total_loss == r2.log[i].total_loss);
        for (std::size_t i = 0; i < s1.params.values.size(); ++i)
            CHECK(max_abs_diff(s1.params.values[i], s2.params.values[i]) == 0.0);
        CHECK(r1.nfe == r2.nfe);
    }

    SUBCASE("mismatched stack suffix is rejected") {
        OptimizerConfig cfg;
        StackConfig scfg;
        scfg.p = 7;  // schedule suffix will be 10
        scfg.n_tokens = fx.model.cfg.n_tokens;
        scfg.d_c = fx.model.cfg.d_c;
        auto stack = init_stack(scfg, 42);
        CHECK_THROWS_AS(optimize_steering_condition(stack, fx.model, fx.pairs, fx.codec,
                                                    fx.sched, fx.policy, cfg),
                        ValueError);
    }

    SUBCASE("empty example set is rejected") {
        OptimizerConfig cfg;
        auto stack = fx.fresh_stack(cfg);
        std::vector<ExamplePair> none;
        CHECK_THROWS_AS(optimize_steering_condition(stack, fx.model, none, fx.codec, fx.sched,
                                                    fx.policy, cfg),
                        ValueError);
    }
}

TEST_CASE("apply_edit") {
    Fixture fx;
    OptimizerConfig cfg;

    SUBCASE("default budget: 10 inversion calls plus 20 steered calls") {
        auto stack = fx.fresh_stack(cfg);
        auto res = apply_edit(fx.pairs[0].R_B, stack, fx.model, fx.codec, fx.sched, cfg);
        CHECK(res.nfe_inversion == 10);
        CHECK(res.nfe_sampling == 20);
        CHECK(res.nfe_total() == 30);
        CHECK(res.R_edit.shape == Shape{16});
        CHECK(res.Z_edit.shape == Shape{8});
    }

    SUBCASE("a fresh stack edits exactly like the unconditional baseline") {
        auto stack = fx.fresh_stack(cfg);
        auto steered = apply_edit(fx.pairs[0].R_B, stack, fx.model, fx.codec, fx.sched, cfg);
        OptimizerConfig base = cfg;
        base.use_steering = false;
        auto plain = apply_edit(fx.pairs[0].R_B, stack, fx.model, fx.codec, fx.sched, base);
        CHECK(max_abs_diff(steered.Z_edit, plain.Z_edit) <= 1e-12);
        CHECK(plain.nfe_sampling == 10);
    }

    SUBCASE("inversion correction folds into the inversion budget") {
        cfg.correct_inversions = true;
        cfg.correction.iterations = 3;
        auto stack = fx.fresh_stack(cfg);
        auto res = apply_edit(fx.pairs[0].R_B, stack, fx.model, fx.codec, fx.sched, cfg);
        // naive 10 + (3 iterations + initial + final scoring) * 10
        CHECK(res.nfe_inversion == 10 + 5 * 10);
        CHECK(res.nfe_sampling == 20);
    }

    SUBCASE("stack/schedule mismatch is rejected") {
        StackConfig scfg;
        scfg.p = 3;
        auto stack = init_stack(scfg, 42);
        CHECK_THROWS_AS(apply_edit(fx.pairs[0].R_B, stack, fx.model, fx.codec, fx.sched, cfg),
                        ValueError);
    }
}
