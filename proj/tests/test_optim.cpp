#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "vdc/optim.hpp"

using namespace vdc;

TEST_CASE("zero gradient leaves parameters and moments unchanged") {
    std::vector<Tensor> params{Tensor(Shape{3}, {1, 2, 3})};
    std::vector<Tensor> grads{Tensor(Shape{3}, 0.0)};
    auto st = AdamState::init(params);
    adam_step(params, grads, st, 1e-3);
    CHECK(params[0].data == std::vector<double>{1, 2, 3});
    CHECK(st.m[0] == std::vector<double>(3, 0.0));
    CHECK(st.v[0] == std::vector<double>(3, 0.0));
    CHECK(st.step_count == 1);
}

TEST_CASE("single hand-evaluated Adam step") {
    // theta=1, g=0.5, lr=1e-3: mhat=0.5, vhat=0.25, step = lr*0.5/(0.5+1e-8)
    std::vector<Tensor> params{Tensor(Shape{1}, {1.0})};
    std::vector<Tensor> grads{Tensor(Shape{1}, {0.5})};
    auto st = AdamState::init(params);
    adam_step(params, grads, st, 1e-3);
    double want = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
    CHECK(params[0].data[0] == doctest::Approx(want).epsilon(1e-12));
    CHECK(params[0].data[0] == doctest::Approx(0.9990000).epsilon(1e-6));
}

TEST_CASE("two steps with constant gradient match the closed-form recurrence") {
    double g = 0.3, lr = 1e-2, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    std::vector<Tensor> params{Tensor(Shape{1}, {2.0})};
    std::vector<Tensor> grads{Tensor(Shape{1}, {g})};
    auto st = AdamState::init(params);
    adam_step(params, grads, st, lr);
    adam_step(params, grads, st, lr);

    // hand recurrence
    double m = 0, v = 0, theta = 2.0;
    for (int t = 1; t <= 2; ++t) {
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        double mhat = m / (1 - std::pow(b1, t));
        double vhat = v / (1 - std::pow(b2, t));
        theta -= lr * mhat / (std::sqrt(vhat) + eps);
    }
    CHECK(params[0].data[0] == doctest::Approx(theta).epsilon(1e-14));
}

TEST_CASE("first-step update nearly invariant to loss rescaling") {
    auto step_with = [](double gscale) {
        std::vector<Tensor> params{Tensor(Shape{1}, {1.0})};
        std::vector<Tensor> grads{Tensor(Shape{1}, {0.05 * gscale})};
        auto st = AdamState::init(params);
        adam_step(params, grads, st, 1e-3);
        return 1.0 - params[0].data[0];
    };
    double u1 = step_with(1.0);
    double u100 = step_with(100.0);
    CHECK(std::abs(u1 - u100) / std::abs(u1) < 1e-6);
}

TEST_CASE("errors: shape mismatch and non-finite gradient") {
    std::vector<Tensor> params{Tensor(Shape{2}, 0.0)};
    auto st = AdamState::init(params);
    std::vector<Tensor> bad_shape{Tensor(Shape{3}, 0.0)};
    CHECK_THROWS_AS(adam_step(params, bad_shape, st, 1e-3), ShapeError);

    std::vector<Tensor> nan_grad{Tensor(Shape{2}, 0.0)};
    nan_grad[0].data[1] = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::string> names{"gen0/w1"};
    try {
        adam_step(params, nan_grad, st, 1e-3, &names);
        FAIL("expected throw");
    } catch (const ValueError& e) {
        CHECK(std::string(e.what()).find("gen0/w1") != std::string::npos);
    }
    CHECK_THROWS_AS(adam_step(params, nan_grad, st, 0.0), ValueError);
}

TEST_CASE("cosine schedule endpoints and midpoint") {
    CosineSchedule s{5e-3, 1e-3, 200};
    CHECK(cosine_lr(0, s) == doctest::Approx(5e-3));
    CHECK(cosine_lr(200, s) == doctest::Approx(1e-3));
    CHECK(cosine_lr(100, s) == doctest::Approx(3e-3));
    CHECK_THROWS_AS(cosine_lr(-1, s), ValueError);
    CHECK_THROWS_AS(cosine_lr(201, s), ValueError);
}

TEST_CASE("cosine schedule is monotone non-increasing and bounded") {
    CosineSchedule s{5e-3, 1e-3, 57};
    double prev = cosine_lr(0, s);
    for (long i = 1; i <= s.total_steps; ++i) {
        double lr = cosine_lr(i, s);
        CHECK(lr <= prev + 1e-15);
        CHECK(lr >= s.lr_min - 1e-15);
        CHECK(lr <= s.lr_max + 1e-15);
        prev = lr;
    }
}
