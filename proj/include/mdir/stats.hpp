#pragma once

#include <vector>

namespace mdir {

// Standard normal CDF.
double normal_cdf(double x);

// One-sample Kolmogorov-Smirnov against the standard normal.
// Returns {D, p} with the asymptotic Kolmogorov p approximation.
struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};
KsResult ks_test_normal(std::vector<double> samples);

// Two-sample Kolmogorov-Smirnov.
KsResult ks_test_two_sample(std::vector<double> a, std::vector<double> b);

}  // namespace mdir
