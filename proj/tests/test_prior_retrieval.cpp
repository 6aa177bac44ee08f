#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pmce/error.hpp"
#include "pmce/prior_retrieval.hpp"
#include "test_util.hpp"

using namespace pmce;
using pmce::testing::mat;
using pmce::testing::vec;

namespace {

KnowledgeBank toy_bank(const Matrix& means, const Matrix& names) {
  KnowledgeBank b;
  for (Eigen::Index i = 0; i < means.rows(); ++i) b.class_names.push_back("c" + std::to_string(i));
  b.means = means;
  b.name_embs = names;
  return b;
}

std::vector<std::size_t> brute_top_k(const std::vector<double>& s, std::size_t k) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });
  idx.resize(k);
  return idx;
}

}  // namespace

TEST_CASE("cosine scores") {
  const Matrix keys = mat({{1, 2}, {2, -1}, {2, 1}});
  const auto s = cosine_scores(vec({1, 2}), keys);
  CHECK(s(0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s(1) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(s(2) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK_THROWS_AS(cosine_scores(vec({0, 0}), keys), InvalidArgument);
  CHECK_THROWS_AS(cosine_scores(vec({1, 0, 0}), keys), DimensionError);
}

TEST_CASE("top_k examples") {
  CHECK(top_k(vec({0.9, 0.1, 0.5}), 2) == std::vector<std::size_t>{0, 2});
  CHECK(top_k(vec({0.5, 0.5}), 1) == std::vector<std::size_t>{0});
  CHECK(top_k(vec({0.2, 0.9, 0.2, 0.4}), 4) == std::vector<std::size_t>{1, 3, 0, 2});
  CHECK_THROWS_AS(top_k(vec({0.2}), 2), InvalidArgument);
  CHECK_THROWS_AS(top_k(vec({0.2}), 0), InvalidArgument);
}

TEST_CASE("top_k agrees with a full stable sort") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto n = std::uniform_int_distribution<std::size_t>(1, 200)(rng);
    const auto k = std::uniform_int_distribution<std::size_t>(1, n)(rng);
    std::vector<double> s(n);
    // coarse values force many ties
    std::uniform_int_distribution<int> level(0, 9);
    for (auto& x : s) x = level(rng) / 10.0;
    REQUIRE(top_k(std::span<const double>(s), k) == brute_top_k(s, k));
  }
}

TEST_CASE("prior weights") {
  const auto w = prior_weights(vec({1, 0}), 1.0);
  CHECK(w(0) == doctest::Approx(0.73106).epsilon(1e-5));
  CHECK(w(1) == doctest::Approx(0.26894).epsilon(1e-5));

  for (double tau : {0.01, 1.0, 100.0}) {
    const auto u = prior_weights(vec({0.3, 0.3, 0.3, 0.3}), tau);
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(u(i) == doctest::Approx(0.25).epsilon(1e-15));
  }

  const auto hot = prior_weights(vec({0.9, -0.4, 0.1}), 1e6);
  for (Eigen::Index i = 0; i < 3; ++i) CHECK(std::abs(hot(i) - 1.0 / 3.0) < 1e-3);

  CHECK_THROWS_AS(prior_weights(vec({1, 0}), 0.0), InvalidArgument);
}

TEST_CASE("prior weights sum to one and ignore score offsets") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + trial % 20;
    Vector s(n);
    for (auto& x : s) x = u(rng);
    const double tau = std::pow(10.0, 2.0 * u(rng));
    const auto w = prior_weights(s, tau);
    REQUIRE(std::abs(w.sum() - 1.0) < 1e-9);
    REQUIRE((w.array() >= 0.0).all());
    const auto shifted = prior_weights((s.array() + 50.0 * u(rng)).matrix(), tau);
    REQUIRE((w - shifted).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("prior mean") {
  const auto bank = toy_bank(mat({{0, 0}, {2, 2}, {5, -1}}), mat({{1, 0}, {0, 1}, {1, 1}}));
  const std::vector<std::size_t> one{2};
  CHECK(prior_mean(bank, one, vec({1.0})) == vec({5, -1}));
  const std::vector<std::size_t> two{0, 1};
  CHECK(prior_mean(bank, two, vec({0.5, 0.5})).isApprox(vec({1, 1}), 1e-15));
  const std::vector<std::size_t> rev{2, 0};
  CHECK(prior_mean(bank, rev, vec({1.0, 0.0})) == vec({5, -1}));
}

TEST_CASE("map fusion") {
  const Vector p = vec({1, 0});
  const Vector mu = vec({0, 1});
  CHECK(map_fuse(p, mu, 1.0) == p);
  CHECK(map_fuse(p, mu, 0.0) == mu);
  const auto f = map_fuse(p, mu, 0.33);
  CHECK(f(0) == doctest::Approx(0.33).epsilon(1e-15));
  CHECK(f(1) == doctest::Approx(0.67).epsilon(1e-15));
  CHECK_THROWS_AS(map_fuse(p, mu, 1.5), InvalidArgument);
  CHECK_THROWS_AS(map_fuse(p, vec({1, 2, 3}), 0.5), DimensionError);
}

TEST_CASE("map fusion stays inside the ball around any target") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    Vector p(6), mu(6), t(6);
    for (int i = 0; i < 6; ++i) {
      p(i) = n(rng);
      mu(i) = n(rng);
      t(i) = n(rng);
    }
    const double a = u(rng);
    const auto f = map_fuse(p, mu, a);
    REQUIRE((f - t).norm() <= std::max((p - t).norm(), (mu - t).norm()) + 1e-12);
  }
}

TEST_CASE("alpha from variances") {
  CHECK(alpha_from_variances(1.0, 1.0) == 0.5);
  CHECK(alpha_from_variances(2.0, 1.0) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(alpha_from_variances(1.0, 1e-12) > 1.0 - 1e-6);
  CHECK_THROWS_AS(alpha_from_variances(0.0, 1.0), InvalidArgument);
}

TEST_CASE("alpha defaults by shot count") {
  PriorConfig cfg;
  CHECK(cfg.resolved_alpha(1) == 0.33);
  CHECK(cfg.resolved_alpha(5) == 0.7);
  cfg.alpha = AlphaFromVariances{3.0, 1.0};
  CHECK(cfg.resolved_alpha(1) == 0.75);
  cfg.alpha = 0.2;
  CHECK(cfg.resolved_alpha(5) == 0.2);
}

TEST_CASE("calibration with a single bank class equal to the true mean") {
  const auto bank = toy_bank(mat({{3, -2}}), mat({{1, 1}}));
  PriorConfig cfg;
  cfg.k = 1;
  cfg.alpha = 0.0;
  const auto out = calibrate_prototype(mat({{10, 10}}), vec({0.2, 0.7}), bank, cfg);
  CHECK(out == vec({3, -2}));
}

TEST_CASE("calibration matches a hand-composed chain") {
  const auto bank = toy_bank(mat({{1, 0}, {0, 4}}), mat({{1, 0}, {0, 1}}));
  PriorConfig cfg;
  cfg.k = 2;
  cfg.tau = 1.0;
  cfg.alpha = 0.5;
  const Matrix support = mat({{2, 2}, {4, 0}});
  const Vector name = vec({3, 4});

  // scores 0.6 and 0.8; sorted order is (1, 0)
  const double e1 = std::exp(0.8), e0 = std::exp(0.6);
  const double w1 = e1 / (e0 + e1), w0 = e0 / (e0 + e1);
  const Vector mu = vec({w0 * 1.0, w1 * 4.0});
  const Vector p = vec({3, 1});
  const Vector expected = 0.5 * p + 0.5 * mu;

  const auto c = calibrate_prototype_detailed(support, name, bank, cfg);
  CHECK(c.neighbors == std::vector<std::size_t>{1, 0});
  CHECK(c.weights(0) == doctest::Approx(w1).epsilon(1e-12));
  CHECK(c.p_init.isApprox(p, 1e-15));
  CHECK(c.mu_prior.isApprox(mu, 1e-12));
  CHECK(c.calibrated.isApprox(expected, 1e-12));
  CHECK(c.alpha == 0.5);
}

TEST_CASE("support-only fusion ignores the bank") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix means(5, 3), names(5, 2), support(2, 3);
  for (auto& x : means.reshaped()) x = n(rng);
  for (auto& x : names.reshaped()) x = n(rng);
  for (auto& x : support.reshaped()) x = n(rng);
  PriorConfig cfg;
  cfg.k = 3;
  cfg.alpha = 1.0;
  const auto out = calibrate_prototype(support, vec({0.1, -1.0}), toy_bank(means, names), cfg);
  CHECK(out == Vector(support.colwise().mean().transpose()));
}

TEST_CASE("retrieval is invariant to the scale of the name embedding") {
  std::mt19937_64 rng(10);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix means(6, 4), names(6, 3), support(1, 4);
  for (auto& x : means.reshaped()) x = n(rng);
  for (auto& x : names.reshaped()) x = n(rng);
  for (auto& x : support.reshaped()) x = n(rng);
  const auto bank = toy_bank(means, names);
  PriorConfig cfg;
  cfg.k = 4;
  const Vector q = vec({0.3, -0.2, 0.9});
  const auto a = calibrate_prototype(support, q, bank, cfg);
  const auto b = calibrate_prototype(support, Vector(7.5 * q), bank, cfg);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("visual-mean cue scores the support prototype against bank means") {
  const auto bank = toy_bank(mat({{1, 0}, {0, 1}, {-1, 0}}), mat({{0, 1}, {1, 0}, {1, 1}}));
  PriorConfig cfg;
  cfg.k = 1;
  cfg.alpha = 0.0;
  cfg.cue = RetrievalCue::visual_mean;
  const auto out = calibrate_prototype(mat({{0.1, 2.0}}), vec({0, 1}), bank, cfg);
  CHECK(out == vec({0, 1}));
}

TEST_CASE("prior config validation") {
  PriorConfig cfg;
  CHECK_THROWS_AS(cfg.validate(5), InvalidArgument);  // k = 7 > 5
  cfg.k = 5;
  CHECK_NOTHROW(cfg.validate(5));
  cfg.tau = -1.0;
  CHECK_THROWS_AS(cfg.validate(5), InvalidArgument);
  cfg.tau = 1.0;
  cfg.alpha = -0.1;
  CHECK_THROWS_AS(cfg.validate(5), InvalidArgument);
}
