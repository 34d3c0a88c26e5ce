#pragma once

#include <span>

namespace screenseg {

struct TTestResult {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;  // two-sided
};

// Unpaired two-sided Welch t-test (unequal variances,
// Welch-Satterthwaite degrees of freedom). Requires >= 2 values per sample
// and a non-zero pooled variance; degenerate inputs throw.
TTestResult welch_t_test(std::span<const double> sample_a, std::span<const double> sample_b);

// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
// Exposed for the reference tests.
double incomplete_beta(double a, double b, double x);

// Two-sided p-value of the t distribution with `df` degrees of freedom.
double student_t_two_sided_p(double t, double df);

double mean_of(std::span<const double> xs);
double sample_variance(std::span<const double> xs);  // unbiased (n-1)
double median_of(std::span<const double> xs);

}  // namespace screenseg
