#include "screenseg/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "screenseg/error.hpp"

namespace screenseg {

double mean_of(std::span<const double> xs) {
    double s = 0.0;
    for (double x : xs) s += x;
    return xs.empty() ? 0.0 : s / static_cast<double>(xs.size());
}

double sample_variance(std::span<const double> xs) {
    if (xs.size() < 2) return 0.0;
    const double m = mean_of(xs);
    double s = 0.0;
    for (double x : xs) {
        const double d = x - m;
        s += d * d;
    }
    return s / static_cast<double>(xs.size() - 1);
}

double median_of(std::span<const double> xs) {
    if (xs.empty()) return 0.0;
    std::vector<double> v(xs.begin(), xs.end());
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// ---------------------------------------------------------------------------
// Incomplete beta via Lentz's continued fraction.
// ---------------------------------------------------------------------------

namespace {

double beta_cf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kTiny = 1e-300;

    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln_front =
        std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
        b * std::log(1.0 - x);
    const double front = std::exp(ln_front);
    // Use the symmetry relation for fast continued-fraction convergence.
    if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
    return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double df) {
    if (df <= 0.0) throw ValidationError("student_t_two_sided_p: df must be positive");
    const double x = df / (df + t * t);
    return incomplete_beta(0.5 * df, 0.5, x);
}

TTestResult welch_t_test(std::span<const double> sample_a, std::span<const double> sample_b) {
    if (sample_a.size() < 2 || sample_b.size() < 2)
        throw ValidationError("welch_t_test: each sample needs >= 2 values");
    const double na = static_cast<double>(sample_a.size());
    const double nb = static_cast<double>(sample_b.size());
    const double va = sample_variance(sample_a);
    const double vb = sample_variance(sample_b);
    const double sea = va / na, seb = vb / nb;
    const double se2 = sea + seb;
    if (se2 <= 0.0) throw ValidationError("welch_t_test: zero pooled variance");

    TTestResult r;
    r.t = (mean_of(sample_a) - mean_of(sample_b)) / std::sqrt(se2);
    r.df = se2 * se2 / (sea * sea / (na - 1.0) + seb * seb / (nb - 1.0));
    r.p = student_t_two_sided_p(r.t, r.df);
    return r;
}

}  // namespace screenseg
