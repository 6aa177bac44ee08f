#include <doctest.h>

#include <cmath>
#include <set>

#include "pmce/episodic_eval.hpp"
#include "pmce/error.hpp"
#include "pmce/knowledge_bank.hpp"
#include "pmce/synthetic.hpp"
#include "test_util.hpp"

using namespace pmce;
using pmce::testing::mat;
using pmce::testing::vec;

namespace {

struct Fixture {
  SynthData data;
  KnowledgeBank bank;
  EnhancerModel enhancer;

  Fixture() {
    SynthConfig cfg;
    cfg.per_class = 30;
    data = generate(cfg);
    bank = build_bank(data.base);
    enhancer.config = EnhancerConfig::for_dims(cfg.d_v, cfg.d_t, 4);
    enhancer.params = init_params(enhancer.config, 1);
    enhancer.params.beta = 0.5;
  }
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

EvalConfig small_eval() {
  EvalConfig cfg;
  cfg.episodes = 20;
  cfg.seed = 5;
  return cfg;
}

/// Plain prototypical classification written out independently.
std::vector<std::uint32_t> reference_prototypical(const Episode& ep) {
  const auto n = ep.class_ids.size();
  const auto d = ep.support.front().visual.size();
  std::vector<Vector> protos(n, Vector::Zero(d));
  std::vector<int> counts(n, 0);
  for (std::size_t i = 0; i < ep.support.size(); ++i) {
    protos[ep.support_labels[i]] += ep.support[i].visual.cast<double>();
    ++counts[ep.support_labels[i]];
  }
  for (std::size_t c = 0; c < n; ++c) protos[c] /= counts[c];
  std::vector<std::uint32_t> out;
  for (const auto& q : ep.query) {
    std::uint32_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < n; ++c) {
      const double dist = (q.visual.cast<double>() - protos[c]).squaredNorm();
      if (dist < best_d) {
        best_d = dist;
        best = static_cast<std::uint32_t>(c);
      }
    }
    out.push_back(best);
  }
  return out;
}

}  // namespace

TEST_CASE("episodes are disjoint and deterministic") {
  const auto& f = fixture();
  auto cfg = small_eval();
  cfg.k_shot = 5;
  for (std::uint64_t e = 0; e < 50; ++e) {
    const auto ep = sample_episode(f.data.novel, cfg, e);
    REQUIRE(ep.support.size() == 25);
    REQUIRE(ep.query.size() == 75);
    REQUIRE(std::set<std::uint32_t>(ep.class_ids.begin(), ep.class_ids.end()).size() == 5);
    // records are distinct draws, so no support row equals a query row of the same class
    for (std::size_t s = 0; s < ep.support.size(); ++s) {
      for (std::size_t q = 0; q < ep.query.size(); ++q) {
        REQUIRE_FALSE(ep.support[s] == ep.query[q]);
      }
    }
    for (std::size_t i = 0; i < ep.query.size(); ++i) {
      REQUIRE(ep.query[i].class_id == ep.class_ids[ep.query_labels[i]]);
    }
    const auto again = sample_episode(f.data.novel, cfg, e);
    REQUIRE(again.class_ids == ep.class_ids);
    REQUIRE(again.query == ep.query);
    REQUIRE(again.support == ep.support);
  }
  CHECK_FALSE(sample_episode(f.data.novel, cfg, 0).query == sample_episode(f.data.novel, cfg, 1).query);
}

TEST_CASE("class sampling frequency is uniform within binomial bounds") {
  auto split = testing::random_split("novel", 20, 20, 3, 2, 1);
  EvalConfig cfg;
  cfg.seed = 17;
  std::vector<int> hits(20, 0);
  const int draws = 1000;
  for (int e = 0; e < draws; ++e) {
    for (auto c : sample_episode(split, cfg, static_cast<std::uint64_t>(e)).class_ids) ++hits[c];
  }
  const double p = 5.0 / 20.0;
  const double sigma = std::sqrt(draws * p * (1 - p));
  for (int c = 0; c < 20; ++c) {
    CAPTURE(c);
    CHECK(std::abs(hits[c] - draws * p) <= 3 * sigma);
  }
}

TEST_CASE("support semantics aggregation") {
  CHECK(aggregate_support_semantics(mat({{0, 2}, {2, 0}})) == vec({1, 1}));
  CHECK(aggregate_support_semantics(mat({{0.5, -1}})) == vec({0.5, -1}));
  const auto a = aggregate_support_semantics(mat({{1, 2}, {3, 5}, {-1, 0}}));
  const auto b = aggregate_support_semantics(mat({{-1, 0}, {1, 2}, {3, 5}}));
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("logistic regression examples") {
  const auto r = classify_lr(mat({{1, 0}, {-1, 0}}), mat({{0.9, 0}, {0, 0}, {-3, 1}}), 1.0);
  CHECK(r.labels == std::vector<std::uint32_t>{0, 0, 1});
  CHECK(r.probabilities(1, 0) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(r.probabilities(1, 1) == doctest::Approx(0.5).epsilon(1e-6));
  CHECK(r.model.converged);
}

TEST_CASE("logistic regression reaches the optimality condition") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 5; ++trial) {
    const int samples = 12, d = 6, classes = 4;
    Matrix x(samples, d);
    for (auto& v : x.reshaped()) v = n(rng);
    std::vector<std::uint32_t> y;
    for (int i = 0; i < samples; ++i) y.push_back(static_cast<std::uint32_t>(i % classes));
    const double l2 = 0.5;
    const auto m = fit_logistic_regression(x, y, classes, l2);
    REQUIRE(m.converged);

    // gradient recomputed here: X^T (P - Y) / n + l2 W and mean(P - Y)
    Matrix logits = x * m.weights;
    logits.rowwise() += m.bias.transpose();
    Matrix resid(samples, classes);
    for (int i = 0; i < samples; ++i) {
      const Vector row = logits.row(i).transpose();
      const Vector e = (row.array() - row.maxCoeff()).exp();
      resid.row(i) = (e / e.sum()).transpose();
      resid(i, y[static_cast<std::size_t>(i)]) -= 1.0;
    }
    const Matrix gw = x.transpose() * resid / samples + l2 * m.weights;
    const Vector gb = resid.colwise().mean().transpose();
    CHECK(std::max(gw.cwiseAbs().maxCoeff(), gb.cwiseAbs().maxCoeff()) < 1e-6);
    CHECK(predict_proba(m, x).rowwise().sum().isOnes(1e-12));
  }
}

TEST_CASE("nearest prototype metrics") {
  const Matrix protos = mat({{10, 0}, {0, 1}});
  CHECK(classify_nearest(protos, mat({{1, 1}}), Metric::EU) == std::vector<std::uint32_t>{1});
  CHECK(classify_nearest(protos, mat({{1, 1}}), Metric::CO) == std::vector<std::uint32_t>{0});
  CHECK(classify_nearest(protos, mat({{0, 1}, {10, 0}}), Metric::EU) == std::vector<std::uint32_t>{1, 0});
  CHECK(classify_nearest(protos, mat({{0, 1}, {10, 0}}), Metric::CO) == std::vector<std::uint32_t>{1, 0});
  const Matrix q = mat({{0.3, 2}, {5, 1}, {-1, 0.2}});
  CHECK(classify_nearest(protos, q, Metric::CO) == classify_nearest(protos, Matrix(3.7 * q), Metric::CO));
  CHECK(argmax_rows(mat({{1, 3, 3}, {2, 2, 2}})) == std::vector<std::uint32_t>{1, 0});
}

TEST_CASE("report aggregation") {
  const auto r = aggregate_report({0.8, 1.0});
  CHECK(r.mean == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(r.ci95_half_width == doctest::Approx(0.19600).epsilon(1e-5));
  CHECK(r.ci95_half_width == doctest::Approx(1.96 * std::sqrt(0.02) / std::sqrt(2.0)).epsilon(1e-14));
  CHECK(aggregate_report({0.6, 0.6, 0.6}).ci95_half_width == 0.0);
  const auto s = aggregate_report({0.2, 0.9, 0.4, 0.7});
  CHECK(s.mean >= 0.2);
  CHECK(s.mean <= 0.9);
}

TEST_CASE("baseline equals an independent prototypical classifier") {
  const auto& f = fixture();
  auto cfg = small_eval();
  cfg.flags = {false, false, false};
  cfg.classifier = ClassifierKind::EU;
  for (std::uint64_t e = 0; e < 20; ++e) {
    const auto ep = sample_episode(f.data.novel, cfg, e);
    REQUIRE(predict_episode(ep, f.bank, nullptr, cfg) == reference_prototypical(ep));
  }
  // support-only fusion is the same classifier
  cfg.flags.use_map = true;
  cfg.prior.alpha = 1.0;
  for (std::uint64_t e = 0; e < 20; ++e) {
    const auto ep = sample_episode(f.data.novel, cfg, e);
    REQUIRE(predict_episode(ep, f.bank, nullptr, cfg) == reference_prototypical(ep));
  }
}

TEST_CASE("a closed enhancer gate makes the enhancement flags irrelevant") {
  const auto& f = fixture();
  auto closed = f.enhancer;
  closed.params.beta = 0.0;
  for (auto kind : {ClassifierKind::LR, ClassifierKind::EU, ClassifierKind::CO}) {
    auto cfg = small_eval();
    cfg.classifier = kind;
    cfg.flags = {true, false, false};
    const auto off = evaluate_episodes(f.data.novel, f.bank, nullptr, cfg);
    cfg.flags = {true, true, true};
    CHECK(evaluate_episodes(f.data.novel, f.bank, &closed, cfg) == off);
  }
}

TEST_CASE("well separated classes are classified perfectly") {
  SynthConfig s;
  s.per_class = 20;
  s.sigma_vis = 0.01;
  const auto data = generate(s);
  const auto bank = build_bank(data.base);
  for (auto kind : {ClassifierKind::LR, ClassifierKind::EU, ClassifierKind::CO}) {
    auto cfg = small_eval();
    cfg.classifier = kind;
    cfg.flags = {false, false, false};
    const auto acc = evaluate_episodes(data.novel, bank, nullptr, cfg);
    CHECK(aggregate_report(acc).mean == 1.0);
  }
}

TEST_CASE("each query is classified on its own") {
  const auto& f = fixture();
  for (auto kind : {ClassifierKind::LR, ClassifierKind::EU, ClassifierKind::CO}) {
    auto cfg = small_eval();
    cfg.classifier = kind;
    for (std::uint64_t e = 0; e < 5; ++e) {
      const auto ep = sample_episode(f.data.novel, cfg, e);
      const auto full = predict_episode(ep, f.bank, &f.enhancer, cfg);
      auto reduced = ep;
      reduced.query.erase(reduced.query.begin() + 7);
      reduced.query_labels.erase(reduced.query_labels.begin() + 7);
      auto expected = full;
      expected.erase(expected.begin() + 7);
      REQUIRE(predict_episode(reduced, f.bank, &f.enhancer, cfg) == expected);
    }
  }
}

TEST_CASE("every ablation combination runs") {
  const auto& f = fixture();
  const auto lattice = AblationFlags::lattice();
  REQUIRE(lattice.size() == 8);
  CHECK(lattice.front().label() == "baseline");
  CHECK(lattice.back().label() == "map+support+query");
  std::set<std::string> labels;
  for (const auto& flags : lattice) {
    auto cfg = small_eval();
    cfg.episodes = 3;
    cfg.flags = flags;
    const auto acc = evaluate_episodes(f.data.novel, f.bank, &f.enhancer, cfg);
    CHECK(acc.size() == 3);
    labels.insert(flags.label());
  }
  CHECK(labels.size() == 8);
}

TEST_CASE("thread count does not change results") {
  const auto& f = fixture();
  auto cfg = small_eval();
  cfg.episodes = 30;
  const auto one = evaluate_episodes(f.data.novel, f.bank, &f.enhancer, cfg, 1);
  CHECK(evaluate_episodes(f.data.novel, f.bank, &f.enhancer, cfg, 4) == one);
  CHECK(evaluate_episodes(f.data.novel, f.bank, &f.enhancer, cfg, 64) == one);
}

TEST_CASE("per-support logistic regression") {
  const auto& f = fixture();
  auto cfg = small_eval();
  cfg.k_shot = 5;
  cfg.lr_mode = LrFitMode::supports;
  const auto acc = evaluate_episodes(f.data.novel, f.bank, &f.enhancer, cfg);
  CHECK(aggregate_report(acc).mean > 0.5);
  // with one shot, per-support and per-prototype fitting see the same points
  cfg.k_shot = 1;
  cfg.flags.enhance_support = false;
  const auto a = evaluate_episodes(f.data.novel, f.bank, &f.enhancer, cfg);
  cfg.lr_mode = LrFitMode::prototypes;
  CHECK(evaluate_episodes(f.data.novel, f.bank, &f.enhancer, cfg) == a);
}

TEST_CASE("invalid evaluation requests") {
  const auto& f = fixture();
  auto cfg = small_eval();
  CHECK_THROWS_AS(evaluate_episodes(f.data.novel, f.bank, nullptr, cfg), InvalidArgument);
  cfg.flags = {false, false, false};
  cfg.n_way = 11;
  CHECK_THROWS_AS(evaluate_episodes(f.data.novel, f.bank, nullptr, cfg), InvalidArgument);
  cfg.n_way = 5;
  cfg.m_query = 30;
  CHECK_THROWS_AS(evaluate_episodes(f.data.novel, f.bank, nullptr, cfg), InvalidArgument);
  CHECK(classifier_from_string("co") == ClassifierKind::CO);
  CHECK(to_string(ClassifierKind::EU) == "EU");
  CHECK_THROWS_AS(classifier_from_string("knn"), InvalidArgument);
}
