#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "screenseg/nn/adam.hpp"
#include "screenseg/nn/layers.hpp"
#include "screenseg/rng.hpp"

using namespace screenseg;
using namespace screenseg::nn;

namespace {

Tensor random_tensor(std::vector<int> shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.vec()) v = static_cast<float>(rng.normal(0.0, scale));
    return t;
}

// Naive direct convolution, the oracle for the im2col path.
Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor* bias, int stride, int pad,
                   int groups) {
    const int n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int cout = w.dim(0), cg = w.dim(1), k = w.dim(2);
    const int ho = (h + 2 * pad - k) / stride + 1;
    const int wo = (wd + 2 * pad - k) / stride + 1;
    const int og = cout / groups;
    Tensor y({n, cout, ho, wo});
    for (int nn = 0; nn < n; ++nn)
        for (int co = 0; co < cout; ++co) {
            const int g = co / og;
            for (int yo = 0; yo < ho; ++yo)
                for (int xo = 0; xo < wo; ++xo) {
                    double acc = bias ? (*bias)[static_cast<size_t>(co)] : 0.0;
                    for (int c = 0; c < cg; ++c)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                const int yy = yo * stride - pad + ky;
                                const int xx = xo * stride - pad + kx;
                                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                                acc += static_cast<double>(x.at(nn, g * cg + c, yy, xx)) *
                                       w.at(co, c, ky, kx);
                            }
                    y.at(nn, co, yo, xo) = static_cast<float>(acc);
                }
        }
    return y;
}

// Scalar readout L = sum(y * probe) used for gradient checks.
double readout(const Tensor& y, const Tensor& probe) {
    double s = 0.0;
    for (size_t i = 0; i < y.numel(); ++i) s += static_cast<double>(y[i]) * probe[i];
    return s;
}

// Directional derivative check: perturb x along direction d and compare the
// numeric slope of L(forward(x)) against <dx, d>. Float arithmetic, so the
// tolerance is loose; this guards wiring, not precision.
template <typename Layer>
void check_input_gradient(Layer& layer, const Tensor& x, Rng& rng, double tol = 2e-2) {
    layer.set_training(true);
    Tensor y = layer.forward(x);
    Tensor probe = random_tensor(y.shape(), rng);
    Tensor dx = layer.backward(probe);

    Tensor dir = random_tensor(x.shape(), rng, 1.0);
    double analytic = 0.0;
    for (size_t i = 0; i < dx.numel(); ++i)
        analytic += static_cast<double>(dx[i]) * dir[i];

    const double eps = 1e-3;
    Tensor xp = x, xm = x;
    for (size_t i = 0; i < x.numel(); ++i) {
        xp[i] = static_cast<float>(x[i] + eps * dir[i]);
        xm[i] = static_cast<float>(x[i] - eps * dir[i]);
    }
    const double lp = readout(layer.forward(xp), probe);
    layer.set_training(false);  // drop the stale cache before the next pass
    layer.set_training(true);
    const double lm = readout(layer.forward(xm), probe);
    const double numeric = (lp - lm) / (2.0 * eps);
    const double scale = std::max({std::fabs(numeric), std::fabs(analytic), 1e-2});
    CHECK(std::fabs(numeric - analytic) / scale < tol);
}

}  // namespace

TEST_CASE("conv2d forward matches the direct-convolution oracle") {
    Rng rng(1);
    for (const auto& [stride, pad, groups] : {std::tuple{1, 1, 1}, {2, 1, 1}, {1, 0, 1}, {1, 1, 2}}) {
        Conv2d conv(4, 6, 3, stride, pad, groups, true);
        conv.init(rng);
        Tensor x = random_tensor({2, 4, 9, 7}, rng);
        Tensor y = conv.forward(x);

        std::vector<ParamRef> refs;
        conv.collect("c", refs);
        const Tensor& w = *refs[0].value;
        const Tensor& b = *refs[1].value;
        Tensor expect = conv_oracle(x, w, &b, stride, pad, groups);
        REQUIRE(y.shape() == expect.shape());
        for (size_t i = 0; i < y.numel(); ++i)
            CHECK(y[i] == doctest::Approx(expect[i]).epsilon(1e-4));
    }
}

TEST_CASE("conv2d input gradient") {
    Rng rng(2);
    Conv2d conv(3, 5, 3, 1, 1, 1, true);
    conv.init(rng);
    Tensor x = random_tensor({2, 3, 6, 6}, rng);
    check_input_gradient(conv, x, rng);
}

TEST_CASE("conv2d weight gradient via parameter perturbation") {
    Rng rng(3);
    Conv2d conv(2, 3, 3, 1, 1, 1, true);
    conv.init(rng);
    Tensor x = random_tensor({2, 2, 5, 5}, rng);

    conv.set_training(true);
    Tensor y = conv.forward(x);
    Tensor probe = random_tensor(y.shape(), rng);
    conv.backward(probe);

    std::vector<ParamRef> refs;
    conv.collect("c", refs);
    for (const auto& ref : refs) {
        Rng pick(17);
        for (int t = 0; t < 5; ++t) {
            const size_t i = pick.below(ref.value->numel());
            const float saved = (*ref.value)[i];
            const double eps = 1e-3;
            (*ref.value)[i] = static_cast<float>(saved + eps);
            const double lp = readout(conv.forward(x), probe);
            (*ref.value)[i] = static_cast<float>(saved - eps);
            const double lm = readout(conv.forward(x), probe);
            (*ref.value)[i] = saved;
            const double numeric = (lp - lm) / (2.0 * eps);
            const double analytic = (*ref.grad)[i];
            const double scale = std::max({std::fabs(numeric), std::fabs(analytic), 1e-2});
            CHECK(std::fabs(numeric - analytic) / scale < 2e-2);
        }
    }
}

TEST_CASE("conv transpose forward scatters each input pixel to a kxk block") {
    Rng rng(4);
    ConvTranspose2d up(3, 2, 2, 2, true);
    up.init(rng);
    Tensor x = random_tensor({2, 3, 4, 5}, rng);
    Tensor y = up.forward(x);
    REQUIRE(y.shape() == std::vector<int>{2, 2, 8, 10});

    std::vector<ParamRef> refs;
    up.collect("u", refs);
    const Tensor& w = *refs[0].value;  // [in, out, k, k]
    const Tensor& b = *refs[1].value;
    for (int nn = 0; nn < 2; ++nn)
        for (int co = 0; co < 2; ++co)
            for (int yo = 0; yo < 8; ++yo)
                for (int xo = 0; xo < 10; ++xo) {
                    const int yi = yo / 2, ky = yo % 2, xi = xo / 2, kx = xo % 2;
                    double acc = b[static_cast<size_t>(co)];
                    for (int ci = 0; ci < 3; ++ci)
                        acc += static_cast<double>(x.at(nn, ci, yi, xi)) * w.at(ci, co, ky, kx);
                    CHECK(y.at(nn, co, yo, xo) == doctest::Approx(acc).epsilon(1e-4));
                }
}

TEST_CASE("conv transpose input gradient") {
    Rng rng(5);
    ConvTranspose2d up(4, 3, 2, 2, true);
    up.init(rng);
    Tensor x = random_tensor({2, 4, 3, 3}, rng);
    check_input_gradient(up, x, rng);
}

TEST_CASE("batchnorm normalizes per channel in training mode") {
    Rng rng(6);
    BatchNorm2d bn(3);
    bn.init(rng);
    bn.set_training(true);
    Tensor x = random_tensor({4, 3, 8, 8}, rng, 2.0);
    for (auto& v : x.vec()) v += 1.5f;
    Tensor y = bn.forward(x);
    for (int c = 0; c < 3; ++c) {
        double s = 0.0, s2 = 0.0;
        size_t m = 0;
        for (int nn = 0; nn < 4; ++nn)
            for (int yy = 0; yy < 8; ++yy)
                for (int xx = 0; xx < 8; ++xx) {
                    const double v = y.at(nn, c, yy, xx);
                    s += v;
                    s2 += v * v;
                    ++m;
                }
        const double mu = s / static_cast<double>(m);
        const double var = s2 / static_cast<double>(m) - mu * mu;
        CHECK(mu == doctest::Approx(0.0).epsilon(1e-3));
        CHECK(std::fabs(var - 1.0) < 1e-2);
    }
}

TEST_CASE("batchnorm input gradient") {
    Rng rng(7);
    BatchNorm2d bn(2);
    bn.init(rng);
    Tensor x = random_tensor({3, 2, 4, 4}, rng);
    check_input_gradient(bn, x, rng, 3e-2);
}

TEST_CASE("maxpool forward/backward") {
    Rng rng(8);
    MaxPool2d pool(2, 2, 0);
    pool.set_training(true);
    Tensor x = random_tensor({2, 3, 6, 6}, rng);
    Tensor y = pool.forward(x);
    REQUIRE(y.shape() == std::vector<int>{2, 3, 3, 3});
    for (int nn = 0; nn < 2; ++nn)
        for (int c = 0; c < 3; ++c)
            for (int yo = 0; yo < 3; ++yo)
                for (int xo = 0; xo < 3; ++xo) {
                    float best = -1e30f;
                    for (int ky = 0; ky < 2; ++ky)
                        for (int kx = 0; kx < 2; ++kx)
                            best = std::max(best, x.at(nn, c, 2 * yo + ky, 2 * xo + kx));
                    CHECK(y.at(nn, c, yo, xo) == best);
                }

    Tensor dy(y.shape(), 1.0f);
    Tensor dx = pool.backward(dy);
    double total = 0.0;
    for (size_t i = 0; i < dx.numel(); ++i) total += dx[i];
    CHECK(total == doctest::Approx(static_cast<double>(dy.numel())));
}

TEST_CASE("nearest upsample and its adjoint") {
    Rng rng(9);
    NearestUpsample2x up;
    Tensor x = random_tensor({1, 2, 3, 3}, rng);
    Tensor y = up.forward(x);
    REQUIRE(y.shape() == std::vector<int>{1, 2, 6, 6});
    CHECK(y.at(0, 1, 5, 4) == x.at(0, 1, 2, 2));
    Tensor dy(y.shape(), 1.0f);
    Tensor dx = up.backward(dy);
    for (size_t i = 0; i < dx.numel(); ++i) CHECK(dx[i] == doctest::Approx(4.0f));
}

TEST_CASE("global average pool and linear") {
    Rng rng(10);
    GlobalAvgPool gap;
    Tensor x = random_tensor({2, 3, 4, 4}, rng);
    Tensor y = gap.forward(x);
    REQUIRE(y.shape() == std::vector<int>{2, 3});
    double expect = 0.0;
    for (int yy = 0; yy < 4; ++yy)
        for (int xx = 0; xx < 4; ++xx) expect += x.at(1, 2, yy, xx);
    CHECK(y[static_cast<size_t>(1) * 3 + 2] == doctest::Approx(expect / 16.0).epsilon(1e-5));

    Linear lin(3, 2);
    lin.init(rng);
    check_input_gradient(lin, y, rng);
}

TEST_CASE("relu and sigmoid") {
    Rng rng(11);
    ReLU relu;
    relu.set_training(true);
    Tensor x = random_tensor({1, 2, 3, 3}, rng);
    Tensor y = relu.forward(x);
    for (size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == std::max(0.0f, x[i]));
    Tensor dy(y.shape(), 1.0f);
    Tensor dx = relu.backward(dy);
    for (size_t i = 0; i < dx.numel(); ++i) CHECK(dx[i] == (x[i] > 0 ? 1.0f : 0.0f));

    Sigmoid sig;
    check_input_gradient(sig, x, rng);
}

TEST_CASE("concat/split round trip") {
    Rng rng(12);
    Tensor a = random_tensor({2, 3, 4, 4}, rng);
    Tensor b = random_tensor({2, 2, 4, 4}, rng);
    Tensor cat = concat_channels(a, b);
    REQUIRE(cat.shape() == std::vector<int>{2, 5, 4, 4});
    Tensor a2, b2;
    split_channels(cat, 3, a2, b2);
    CHECK(a2.vec() == a.vec());
    CHECK(b2.vec() == b.vec());
}

TEST_CASE("adam converges on a quadratic") {
    Tensor w({4}, 5.0f), g({4});
    std::vector<ParamRef> refs = {{"w", &w, &g}};
    Adam adam(refs);
    for (int step = 0; step < 2000; ++step) {
        for (size_t i = 0; i < 4; ++i) g[i] = 2.0f * (w[i] - 1.0f);
        adam.step(0.05);
        adam.zero_grad();
    }
    for (size_t i = 0; i < 4; ++i) CHECK(w[i] == doctest::Approx(1.0f).epsilon(1e-3));
}
