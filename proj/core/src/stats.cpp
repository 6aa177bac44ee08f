#include "pmce/stats.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <numeric>

#include "pmce/error.hpp"

namespace pmce {

double mean(const std::vector<double>& xs) {
  if (xs.empty()) throw InvalidArgument("mean of an empty sample");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double sample_stddev(const std::vector<double>& xs) {
  if (xs.size() < 2) throw InvalidArgument("sample standard deviation needs at least 2 values");
  const double m = mean(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw InvalidArgument("paired_t_test: samples differ in size");
  if (a.size() < 2) throw InvalidArgument("paired_t_test needs at least 2 pairs");
  std::vector<double> diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) diff[i] = a[i] - b[i];

  PairedTest r;
  r.n = diff.size();
  r.mean_diff = mean(diff);
  const double se = sample_stddev(diff) / std::sqrt(static_cast<double>(r.n));
  if (se == 0.0) {
    if (r.mean_diff == 0.0) return r;
    r.t = std::copysign(std::numeric_limits<double>::infinity(), r.mean_diff);
    r.p_two_sided = 0.0;
    r.p_greater = r.mean_diff > 0.0 ? 0.0 : 1.0;
    return r;
  }
  r.t = r.mean_diff / se;
  const boost::math::students_t dist(static_cast<double>(r.n - 1));
  r.p_greater = boost::math::cdf(boost::math::complement(dist, r.t));
  r.p_two_sided = 2.0 * boost::math::cdf(boost::math::complement(dist, std::fabs(r.t)));
  return r;
}

}  // namespace pmce
