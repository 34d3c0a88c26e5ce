#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "screenseg/losses.hpp"
#include "screenseg/rng.hpp"
#include "test_support.hpp"

using namespace screenseg;
using namespace screenseg::testing;

TEST_CASE("soft dice: identity, hand case, empty-vs-empty") {
    // identical binary masks -> 1
    std::vector<float> m = {1, 0, 1, 1, 0, 0, 1, 0};
    CHECK(soft_dice(m, m) == doctest::Approx(1.0).epsilon(1e-6));

    // 4 px, 2 positive, pred == 0.5 everywhere: 2*(0.5*2)/(2+2) = 0.5
    std::vector<float> pred(4, 0.5f);
    std::vector<float> target = {1, 1, 0, 0};
    CHECK(soft_dice(pred, target) == doctest::Approx(0.5).epsilon(1e-6));

    // both all-zero: smooth term makes this exactly 1
    std::vector<float> zeros(4, 0.0f);
    CHECK(soft_dice(zeros, zeros) == doctest::Approx(1.0));
}

TEST_CASE("soft dice: bounded and symmetric") {
    Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        auto p = random_probs(64, rng, 0.0, 1.0);
        auto t = random_probs(64, rng, 0.0, 1.0);
        const double d = soft_dice(p, t);
        CHECK(d >= 0.0);
        CHECK(d <= 1.0 + 1e-12);
        CHECK(d == doctest::Approx(soft_dice(t, p)).epsilon(1e-12));
    }
}

TEST_CASE("dice loss: values and finite-difference gradient") {
    std::vector<float> m = {1, 0, 1, 1};
    CHECK(dice_loss(m, m) == doctest::Approx(0.0).epsilon(1e-6));

    std::vector<float> pred(4, 0.5f);
    std::vector<float> target = {1, 1, 0, 0};
    CHECK(dice_loss(pred, target) == doctest::Approx(0.5).epsilon(1e-6));

    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        auto p = random_probs(64, rng);
        auto t = random_probs(64, rng, 0.0, 1.0);
        std::vector<float> grad(64);
        dice_loss_grad(p, t, grad);
        const double err = max_grad_rel_error(
            [&t](std::span<const float> x) { return dice_loss(x, t); }, p, grad);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("bce: hand values, reductions, clamp") {
    std::vector<float> pred(4, 0.5f);
    Rng rng(3);
    auto target = random_binary(4, rng);
    CHECK(bce(pred, target, Reduction::kSum) == doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(bce(pred, target, Reduction::kMean) ==
          doctest::Approx(bce(pred, target, Reduction::kSum) / 4.0).epsilon(1e-15));

    // perfect binary prediction stays ~0 after clamping
    std::vector<float> t = {1, 0, 1, 1, 0};
    CHECK(bce(t, t, Reduction::kSum) <= 5.0 * -std::log(1.0 - kClampEps) + 1e-9);

    for (int trial = 0; trial < 20; ++trial) {
        auto p = random_probs(64, rng);
        auto x = random_binary(64, rng);
        std::vector<float> grad(64);
        bce_grad(p, x, grad, Reduction::kMean);
        const double err = max_grad_rel_error(
            [&x](std::span<const float> q) { return bce(q, x, Reduction::kMean); }, p, grad);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("dice_bce equals its composition bit-for-bit") {
    Rng rng(11);
    std::vector<float> pred(4, 0.5f);
    std::vector<float> target = {1, 1, 0, 0};
    // 0.5*0.5 + 0.5*ln2 with mean reduction
    CHECK(dice_bce(pred, target, Reduction::kMean) ==
          doctest::Approx(0.25 + 0.5 * std::log(2.0)).epsilon(1e-6));

    for (int trial = 0; trial < 100; ++trial) {
        auto p = random_probs(32, rng);
        auto t = random_binary(32, rng);
        const double composed =
            0.5 * dice_loss(p, t) + 0.5 * bce(p, t, Reduction::kMean);
        CHECK(dice_bce(p, t, Reduction::kMean) == composed);  // exact, no tolerance
    }
}

TEST_CASE("class weights per the inverse-positive-count rule") {
    std::vector<float> two_pos = {1, 1, 0, 0};
    auto w = class_weights(two_pos);
    CHECK(w.w1 == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(w.w0 == doctest::Approx(0.5).epsilon(1e-15));

    std::vector<float> none(16, 0.0f);
    w = class_weights(none);
    CHECK(w.w1 == doctest::Approx(1.0));
    CHECK(w.w0 == doctest::Approx(0.0));

    std::vector<float> hundred(400, 0.0f);
    for (int i = 0; i < 100; ++i) hundred[static_cast<size_t>(i)] = 1.0f;
    w = class_weights(hundred);
    CHECK(w.w1 == doctest::Approx(0.01).epsilon(1e-15));
    CHECK(w.w0 == doctest::Approx(0.99).epsilon(1e-15));

    // soft targets are thresholded at 0.5 for counting
    std::vector<float> soft = {0.66f, 0.66f, 0.33f, 0.0f};
    w = class_weights(soft);
    CHECK(w.w1 == doctest::Approx(0.5));
}

TEST_CASE("weighted bce: reduction to plain bce and gradient") {
    Rng rng(19);
    for (int trial = 0; trial < 50; ++trial) {
        auto p = random_probs(32, rng);
        auto t = random_binary(32, rng);
        const ClassWeights half{0.5, 0.5};
        CHECK(w_bce(p, t, half, Reduction::kSum) ==
              doctest::Approx(0.5 * bce(p, t, Reduction::kSum)).epsilon(1e-12));
    }

    // 4 px, 2 positive, pred 0.5, weights (0.5, 0.5), sum reduction
    std::vector<float> pred(4, 0.5f);
    std::vector<float> target = {1, 0, 1, 0};
    CHECK(w_bce(pred, target, class_weights(target), Reduction::kSum) ==
          doctest::Approx(0.5 * 4.0 * std::log(2.0)).epsilon(1e-12));

    for (int trial = 0; trial < 20; ++trial) {
        auto p = random_probs(64, rng);
        auto t = random_binary(64, rng);
        const ClassWeights w = class_weights(t);
        std::vector<float> grad(64);
        w_bce_grad(p, t, w, grad, Reduction::kMean);
        const double err = max_grad_rel_error(
            [&t, &w](std::span<const float> q) { return w_bce(q, t, w, Reduction::kMean); }, p,
            grad);
        CHECK(err < 1e-4);
    }

    // swapped() applies the opposite assignment
    std::vector<float> t2 = {1, 0, 0, 0};
    const ClassWeights w2 = class_weights(t2);
    CHECK(w2.swapped().w0 == w2.w1);
    CHECK(w2.swapped().w1 == w2.w0);
}

TEST_CASE("losses are permutation invariant over pixels") {
    Rng rng(23);
    auto p = random_probs(48, rng);
    auto t = random_binary(48, rng);
    std::vector<size_t> perm(48);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<float> p2(48), t2(48);
    for (size_t i = 0; i < perm.size(); ++i) {
        p2[i] = p[perm[i]];
        t2[i] = t[perm[i]];
    }
    CHECK(dice_loss(p, t) == doctest::Approx(dice_loss(p2, t2)).epsilon(1e-12));
    CHECK(bce(p, t, Reduction::kSum) == doctest::Approx(bce(p2, t2, Reduction::kSum)).epsilon(1e-12));
    const ClassWeights w = class_weights(t);
    CHECK(w_bce(p, t, w, Reduction::kSum) ==
          doctest::Approx(w_bce(p2, t2, w, Reduction::kSum)).epsilon(1e-12));
}

TEST_CASE("shape mismatches are rejected") {
    std::vector<float> a(4, 0.5f), b(5, 0.5f);
    CHECK_THROWS_AS(soft_dice(a, b), ShapeError);
    CHECK_THROWS_AS(bce(a, b), ShapeError);
    CHECK_THROWS_AS(w_bce(a, b, {0.5, 0.5}), ShapeError);
}
