#pragma once

#include <vector>

namespace odflow::stats {

struct TTestResult {
  double t = 0.0;
  double p = 1.0;  // two-sided
  long df = 0;
};

// Paired sample t-test on per-sample errors, paired by position. Zero
// variance of the differences maps to p = 0 when the means differ and p = 1
// otherwise. The Student-t CDF is evaluated through the regularized
// incomplete beta function (continued fraction, accurate to ~1e-8).
TTestResult paired_t_test(const std::vector<double>& errors_a,
                          const std::vector<double>& errors_b);

double student_t_cdf(double t, double df);

// Regularized incomplete beta I_x(a, b).
double incomplete_beta(double a, double b, double x);

}  // namespace odflow::stats
