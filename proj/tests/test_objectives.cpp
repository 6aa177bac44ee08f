#include <doctest.h>

#include <cmath>
#include <random>

#include "pmce/error.hpp"
#include "pmce/objectives.hpp"
#include "test_util.hpp"

using namespace pmce;
using pmce::testing::mat;

namespace {

using Labels = std::vector<std::uint32_t>;

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix m(r, c);
  for (auto& x : m.reshaped()) x = n(rng);
  return m;
}

/// Direct loop form of the supervised contrastive loss.
double naive_supcon(const Matrix& z, const Labels& y, double tau) {
  const auto b = z.rows();
  double total = 0.0;
  for (Eigen::Index i = 0; i < b; ++i) {
    const Vector zi = z.row(i).normalized();
    double denom = 0.0;
    for (Eigen::Index a = 0; a < b; ++a) {
      if (a != i) denom += std::exp(zi.dot(z.row(a).normalized()) / tau);
    }
    double sum = 0.0;
    int positives = 0;
    for (Eigen::Index p = 0; p < b; ++p) {
      if (p == i || y[static_cast<std::size_t>(p)] != y[static_cast<std::size_t>(i)]) continue;
      sum += std::log(std::exp(zi.dot(z.row(p).normalized()) / tau) / denom);
      ++positives;
    }
    if (positives > 0) total += -sum / positives;
  }
  return total / static_cast<double>(b);
}

template <class F>
void check_grad(const Matrix& x, const Matrix& grad, F&& f, double tol) {
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Matrix a = x, b = x;
    a.data()[i] += h;
    b.data()[i] -= h;
    const double num = (f(a) - f(b)) / (2 * h);
    const double an = grad.data()[i];
    REQUIRE(std::abs(num - an) / std::max({std::abs(num), std::abs(an), 1e-6}) < tol);
  }
}

}  // namespace

TEST_CASE("cross entropy") {
  for (int c : {2, 5, 64}) {
    const Labels y{0, static_cast<std::uint32_t>(c - 1)};
    CHECK(cross_entropy(Matrix::Constant(2, c, 0.3), y).loss == doctest::Approx(std::log(c)).epsilon(1e-12));
  }
  const auto r = cross_entropy(mat({{2, 0}}), Labels{0});
  CHECK(r.loss == doctest::Approx(0.126928).epsilon(1e-6));
  CHECK(r.loss == doctest::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-14));
  // large logits do not overflow
  CHECK(std::isfinite(cross_entropy(mat({{1000, -1000}}), Labels{1}).loss));
  CHECK_THROWS_AS(cross_entropy(mat({{1, 0}}), Labels{2}), InvalidArgument);
  CHECK_THROWS_AS(cross_entropy(mat({{1, 0}}), Labels{0, 1}), DimensionError);
}

TEST_CASE("cross entropy gradient") {
  const Matrix logits = random_matrix(4, 3, 1);
  const Labels y{0, 2, 1, 2};
  const auto r = cross_entropy(logits, y);
  check_grad(logits, r.grad, [&](const Matrix& m) { return cross_entropy(m, y).loss; }, 1e-6);
}

TEST_CASE("reconstruction loss") {
  const Matrix mu = random_matrix(3, 4, 2);
  const auto zero = rec_loss(mu, mu);
  CHECK(zero.loss == 0.0);
  CHECK(zero.grad.isZero());
  CHECK(rec_loss(mat({{1, -2}}), mat({{0, 0}})).loss == 3.0);

  const Matrix v = random_matrix(3, 4, 3);
  const double base = rec_loss(v, mu).loss;
  const Matrix scaled = mu + 2.5 * (v - mu);
  CHECK(rec_loss(scaled, mu).loss == doctest::Approx(2.5 * base).epsilon(1e-12));

  const auto r = rec_loss(v, mu);
  check_grad(v, r.grad, [&](const Matrix& m) { return rec_loss(m, mu).loss; }, 1e-6);
}

TEST_CASE("supervised contrastive loss examples") {
  const Matrix same2 = mat({{1, 2, 3}, {1, 2, 3}});
  CHECK(supcon_loss(same2, Labels{4, 4}, 0.1).loss == doctest::Approx(0.0).epsilon(1e-12));

  const Matrix same4 = Matrix::Ones(4, 3);
  CHECK(supcon_loss(same4, Labels{1, 1, 1, 1}, 0.1).loss == doctest::Approx(std::log(3.0)).epsilon(1e-9));
  CHECK(std::abs(supcon_loss(same4, Labels{1, 1, 1, 1}, 0.1).loss - 1.098612) < 1e-6);

  const Matrix any = random_matrix(3, 5, 4);
  const auto none = supcon_loss(any, Labels{0, 1, 2}, 0.1);
  CHECK(none.loss == 0.0);
  CHECK(none.grad.isZero());

  CHECK_THROWS_AS(supcon_loss(Matrix::Zero(2, 3), Labels{0, 0}, 0.1), InvalidArgument);
}

TEST_CASE("supervised contrastive loss matches the direct form and its gradient") {
  const Labels y{0, 1, 0, 2, 1, 0};
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Matrix z = random_matrix(6, 4, 10 + seed);
    for (double tau : {0.1, 0.5}) {
      const auto r = supcon_loss(z, y, tau);
      CHECK(r.loss == doctest::Approx(naive_supcon(z, y, tau)).epsilon(1e-12));
      check_grad(z, r.grad, [&](const Matrix& m) { return supcon_loss(m, y, tau).loss; }, 1e-5);
    }
  }
}

TEST_CASE("total objective") {
  CHECK(total_loss({1, 2, 3}, {1.0, 1.0, 0.1}) == 6.0);
  CHECK(total_loss({1.5, 2, 3}, {0.0, 0.0, 0.1}) == 1.5);
  const LossComponents a{0.3, 1.1, 2.0};
  const LossComponents b{0.7, -0.4, 0.5};
  const LossWeights w{0.4, 2.0, 0.1};
  CHECK(total_loss({a.cls + b.cls, a.rec + b.rec, a.con + b.con}, w) ==
        doctest::Approx(total_loss(a, w) + total_loss(b, w)).epsilon(1e-14));
  CHECK_THROWS_AS((LossWeights{-1.0, 1.0, 0.1}.validate()), InvalidArgument);
  CHECK_THROWS_AS((LossWeights{1.0, 1.0, 0.0}.validate()), InvalidArgument);
}

TEST_CASE("classifier init is zero") {
  const auto c = ClassifierParams::zeros(4, 3);
  CHECK(c.w_c.rows() == 4);
  CHECK(c.w_c.cols() == 3);
  CHECK(c.w_c.isZero());
  CHECK(c.b_c.isZero());
}
