#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "screenseg/image.hpp"
#include "screenseg/rng.hpp"

namespace screenseg::testing {

inline Mask random_mask(int h, int w, double density, Rng& rng) {
    Mask m(h, w);
    for (auto& v : m.v) v = rng.bernoulli(density) ? 1 : 0;
    return m;
}

inline std::vector<float> random_probs(size_t n, Rng& rng, double lo = 0.05, double hi = 0.95) {
    std::vector<float> out(n);
    for (auto& v : out) v = static_cast<float>(rng.uniform(lo, hi));
    return out;
}

inline std::vector<float> random_binary(size_t n, Rng& rng, double density = 0.5) {
    std::vector<float> out(n);
    for (auto& v : out) v = rng.bernoulli(density) ? 1.0f : 0.0f;
    return out;
}

// Central finite differences of a scalar function of a float vector, checked
// against an analytic gradient. The divisor uses the actually-representable
// float step so rounding of x +/- eps does not pollute the quotient. Returns
// the worst relative error.
inline double max_grad_rel_error(const std::function<double(std::span<const float>)>& f,
                                 std::vector<float> x, std::span<const float> analytic,
                                 double eps = 1e-5) {
    double worst = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const float saved = x[i];
        const float up_x = static_cast<float>(static_cast<double>(saved) + eps);
        const float down_x = static_cast<float>(static_cast<double>(saved) - eps);
        x[i] = up_x;
        const double up = f(x);
        x[i] = down_x;
        const double down = f(x);
        x[i] = saved;
        const double fd = (up - down) / (static_cast<double>(up_x) - static_cast<double>(down_x));
        const double err = std::fabs(analytic[i] - fd);
        const double scale = std::max({std::fabs(fd), std::fabs(double(analytic[i])), 1e-3});
        worst = std::max(worst, err / scale);
    }
    return worst;
}

}  // namespace screenseg::testing
