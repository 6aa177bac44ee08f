#include <doctest.h>

#include <cmath>
#include <limits>

#include "pmce/error.hpp"
#include "pmce/stats.hpp"

using namespace pmce;

TEST_CASE("mean and sample standard deviation") {
  CHECK(mean({1.0, 2.0, 6.0}) == 3.0);
  CHECK(sample_stddev({0.8, 1.0}) == doctest::Approx(std::sqrt(0.02)).epsilon(1e-14));
  CHECK(sample_stddev({2.0, 2.0, 2.0}) == 0.0);
  CHECK_THROWS_AS(sample_stddev({1.0}), InvalidArgument);
  CHECK_THROWS_AS(mean({}), InvalidArgument);
}

TEST_CASE("paired t-test against reference values") {
  // differences 1, 2, 3, 4, 5: mean 3, sd sqrt(2.5), t = 3 / (sqrt(2.5) / sqrt 5) = 4.2426
  const std::vector<double> a{2, 4, 6, 8, 10};
  const std::vector<double> b{1, 2, 3, 4, 5};
  const auto t = paired_t_test(a, b);
  CHECK(t.n == 5);
  CHECK(t.mean_diff == 3.0);
  CHECK(t.t == doctest::Approx(4.242640687).epsilon(1e-9));
  // Student t with 4 dof: two-sided p for 4.2426 is 0.013256
  CHECK(t.p_two_sided == doctest::Approx(0.013256).epsilon(1e-4));
  CHECK(t.p_greater == doctest::Approx(t.p_two_sided / 2).epsilon(1e-12));

  const auto rev = paired_t_test(b, a);
  CHECK(rev.t == doctest::Approx(-t.t).epsilon(1e-14));
  CHECK(rev.p_greater == doctest::Approx(1.0 - t.p_greater).epsilon(1e-12));
}

TEST_CASE("paired t-test degenerate differences") {
  const auto same = paired_t_test({1, 2, 3}, {1, 2, 3});
  CHECK(same.t == 0.0);
  CHECK(same.p_two_sided == 1.0);
  const auto shift = paired_t_test({2, 3, 4}, {1, 2, 3});
  CHECK(shift.t == std::numeric_limits<double>::infinity());
  CHECK(shift.p_two_sided == 0.0);
  CHECK_THROWS_AS(paired_t_test({1, 2}, {1}), InvalidArgument);
}
