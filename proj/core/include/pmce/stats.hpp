#pragma once

#include <cstddef>
#include <vector>

namespace pmce {

double mean(const std::vector<double>& xs);

/// Bessel-corrected; needs at least 2 values.
double sample_stddev(const std::vector<double>& xs);

struct PairedTest {
  std::size_t n = 0;
  double mean_diff = 0.0;
  double t = 0.0;
  double p_two_sided = 1.0;
  double p_greater = 1.0;  // H1: mean(a - b) > 0
};

/// Paired Student t-test on a[i] - b[i]. A zero-variance difference gives
/// t = +-inf (p = 0) when the mean is nonzero and t = 0 (p = 1) otherwise.
PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace pmce
