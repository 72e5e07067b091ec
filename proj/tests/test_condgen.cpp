#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "test_util.hpp"
#include "vdc/condgen.hpp"

using namespace vdc;

TEST_CASE("fourier embedding") {
    auto fmap = make_fourier_map(6);
    REQUIRE(fmap.out_dim() == 12);
    CHECK(fmap.freqs[0] == 1.0);
    CHECK(fmap.freqs[5] == 32.0);

    SUBCASE("matches sin/cos of 2 pi b x") {
        Tensor e = fourier_embed(3, 8, fmap);
        double x = 3.0 / 8.0;
        for (std::size_t k = 0; k < 6; ++k) {
            CHECK(e.data[k] == doctest::Approx(std::sin(2.0 * M_PI * fmap.freqs[k] * x))
                                   .epsilon(1e-12));
            CHECK(e.data[6 + k] == doctest::Approx(std::cos(2.0 * M_PI * fmap.freqs[k] * x))
                                       .epsilon(1e-12));
        }
    }

    SUBCASE("index range enforced") {
        CHECK_THROWS_AS(fourier_embed(0, 8, fmap), ValueError);
        CHECK_THROWS_AS(fourier_embed(9, 8, fmap), ValueError);
        CHECK_THROWS_AS(make_fourier_map(0), ValueError);
    }
}

TEST_CASE("stack construction") {
    StackConfig cfg;

    SUBCASE("fresh stacks emit exactly the null condition for every step") {
        for (auto setup : {StackSetup::per_step, StackSetup::single_shared,
                           StackSetup::step_conditioned, StackSetup::free_tokens}) {
            cfg.setup = setup;
            auto stack = init_stack(cfg, 42);
            for (int t = 1; t <= cfg.p; ++t) {
                Tensor c = generate_condition(stack, t);
                REQUIRE(c.shape == Shape{cfg.n_tokens, cfg.d_c});
                for (double v : c.data) CHECK(v == 0.0);
            }
        }
    }

    SUBCASE("per-step stack owns p generators, shared stacks one") {
        cfg.setup = StackSetup::per_step;
        CHECK(init_stack(cfg, 1).n_generators() == cfg.p);
        cfg.setup = StackSetup::single_shared;
        CHECK(init_stack(cfg, 1).n_generators() == 1);
        cfg.setup = StackSetup::step_conditioned;
        CHECK(init_stack(cfg, 1).n_generators() == 1);
    }

    SUBCASE("text-initialized setup is reported unsupported") {
        cfg.setup = StackSetup::per_step_text_init;
        CHECK_THROWS_WITH_AS(init_stack(cfg, 1), doctest::Contains("unsupported"), ValueError);
    }

    SUBCASE("step range enforced") {
        cfg.setup = StackSetup::per_step;
        auto stack = init_stack(cfg, 1);
        CHECK_THROWS_AS(generate_condition(stack, 0), ValueError);
        CHECK_THROWS_AS(generate_condition(stack, cfg.p + 1), ValueError);
    }

    SUBCASE("setup names round-trip") {
        for (auto s : {StackSetup::per_step, StackSetup::single_shared,
                       StackSetup::step_conditioned, StackSetup::free_tokens,
                       StackSetup::per_step_text_init})
            CHECK(parse_setup(setup_name(s)) == s);
        CHECK_THROWS_AS(parse_setup("mlp"), ValueError);
    }

    SUBCASE("seeded init is deterministic") {
        cfg.setup = StackSetup::per_step;
        auto a = init_stack(cfg, 42);
        auto b = init_stack(cfg, 42);
        REQUIRE(a.params.values.size() == b.params.values.size());
        for (std::size_t i = 0; i < a.params.values.size(); ++i)
            CHECK(max_abs_diff(a.params.values[i], b.params.values[i]) == 0.0);
    }
}

TEST_CASE("stack behaviour after perturbing parameters") {
    StackConfig cfg;

    auto nudge = [](ConditionStack& st) {
        // push every parameter off zero so outputs become informative
        std::mt19937_64 rng(5);
        std::normal_distribution<double> g(0.0, 0.2);
        for (auto& v : st.params.values)
            for (auto& x : v.data) x += g(rng);
    };

    SUBCASE("per-step generators are independent") {
        cfg.setup = StackSetup::per_step;
        auto stack = init_stack(cfg, 42);
        nudge(stack);
        Tensor before = generate_condition(stack, 3).detach();
        for (auto& v : stack.params.at("gen0/w3").data) v += 1.0;
        Tensor after = generate_condition(stack, 3).detach();
        CHECK(max_abs_diff(before, after) == 0.0);  // step 3 reads gen2 only
        Tensor step1 = generate_condition(stack, 1).detach();
        for (auto& v : stack.params.at("gen0/w3").data) v -= 1.0;
        CHECK(max_abs_diff(step1, generate_condition(stack, 1).detach()) > 1e-3);
    }

    SUBCASE("single-shared emits the same tokens at every step") {
        cfg.setup = StackSetup::single_shared;
        auto stack = init_stack(cfg, 42);
        nudge(stack);
        Tensor c1 = generate_condition(stack, 1).detach();
        for (int t = 2; t <= cfg.p; ++t)
            CHECK(max_abs_diff(c1, generate_condition(stack, t).detach()) == 0.0);
    }

    SUBCASE("step-conditioned output varies with the step") {
        cfg.setup = StackSetup::step_conditioned;
        auto stack = init_stack(cfg, 42);
        nudge(stack);
        Tensor c1 = generate_condition(stack, 1).detach();
        Tensor c7 = generate_condition(stack, 7).detach();
        CHECK(max_abs_diff(c1, c7) > 1e-6);
    }

    SUBCASE("hidden layers couple tokens: one weight reaches several rows") {
        cfg.setup = StackSetup::per_step;
        auto stack = init_stack(cfg, 42);
        nudge(stack);
        Tensor before = generate_condition(stack, 1).detach();
        stack.params.at("gen0/w1").data[0] += 0.5;
        Tensor after = generate_condition(stack, 1).detach();
        int rows_changed = 0;
        for (std::size_t tok = 0; tok < cfg.n_tokens; ++tok) {
            for (std::size_t j = 0; j < cfg.d_c; ++j) {
                std::size_t i = tok * cfg.d_c + j;
                if (std::abs(before.data[i] - after.data[i]) > 1e-9) {
                    ++rows_changed;
                    break;
                }
            }
        }
        CHECK(rows_changed >= 2);
    }

    SUBCASE("free tokens are the raw parameters") {
        cfg.setup = StackSetup::free_tokens;
        auto stack = init_stack(cfg, 42);
        stack.params.at("tokens2").data[5] = 3.25;
        Tensor c = generate_condition(stack, 3);
        CHECK(c.data[5] == 3.25);
        CHECK(generate_condition(stack, 1).data[5] == 0.0);
    }
}

TEST_CASE("generate_condition is differentiable w.r.t. stack parameters") {
    StackConfig cfg;
    cfg.setup = StackSetup::per_step;
    cfg.n_tokens = 4;
    cfg.d_c = 3;
    cfg.hidden = 8;
    cfg.p = 3;
    auto stack = init_stack(cfg, 42);
    std::mt19937_64 rng(5);
    std::normal_distribution<double> g(0.0, 0.3);
    for (auto& v : stack.params.values)
        for (auto& x : v.data) x += g(rng);

    auto loss_at = [&](ConditionStack& st, Tape* tape) {
        if (tape) st.params.watch_all(*tape);
        Tensor c = generate_condition(st, 2);
        Tensor l = squared_l2(c);
        if (!tape) st.params.detach_all();
        return l;
    };

    Tape tape;
    Tensor loss = loss_at(stack, &tape);
    auto grads = backward(loss, tape);
    auto gvec = stack.params.grads(grads);
    stack.params.detach_all();

    int checked = 0;
    for (std::size_t pi = 0; pi < stack.params.values.size(); ++pi) {
        auto& v = stack.params.values[pi];
        for (std::size_t j = 0; j < v.size(); j += std::max<std::size_t>(1, v.size() / 4)) {
            double h = 1e-6;
            double orig = v.data[j];
            v.data[j] = orig + h;
            double lp = loss_at(stack, nullptr).value();
            v.data[j] = orig - h;
            double lm = loss_at(stack, nullptr).value();
            v.data[j] = orig;
            double fd = (lp - lm) / (2.0 * h);
            double an = gvec[pi].data[j];
            CHECK(testutil::rel_err(an, fd) < 1e-5);
            ++checked;
        }
    }
    CHECK(checked > 20);
}

TEST_CASE("paper-scale configuration lands near the reported generator size") {
    StackConfig cfg;
    cfg.setup = StackSetup::per_step;
    cfg.p = 10;
    cfg.n_tokens = 77;
    cfg.d_c = 768;
    cfg.hidden = 128;
    auto stack = init_stack(cfg, 42);
    double per_gen = static_cast<double>(stack.params_per_generator());
    CHECK(per_gen == doctest::Approx(117248.0));
    CHECK(std::abs(per_gen - 1e5) / 1e5 < 0.20);
}
