#include <doctest.h>

#include "pmce/error.hpp"
#include "pmce/serialization.hpp"

using namespace pmce;
using nlohmann::json;

TEST_CASE("eval config round trips through JSON") {
  EvalConfig c;
  c.n_way = 3;
  c.k_shot = 5;
  c.seed = 99;
  c.prior.k = 4;
  c.prior.alpha = AlphaFromVariances{2.0, 1.0};
  c.prior.cue = RetrievalCue::visual_mean;
  c.classifier = ClassifierKind::CO;
  c.flags = {false, true, false};
  c.lr_mode = LrFitMode::supports;
  const json j = c;
  EvalConfig back;
  from_json(j, back);
  CHECK(json(back) == j);
  CHECK(back.flags == c.flags);
  CHECK(back.prior.resolved_alpha(5) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("partial objects overlay the defaults") {
  TrainConfig t;
  from_json(json{{"epochs", 7}, {"lr", 0.01}}, t);
  CHECK(t.epochs == 7);
  CHECK(t.adam.lr == 0.01);
  CHECK(t.batch_size == 128);
  CHECK(t.weights.lambda_con == 1.0);

  SynthConfig s;
  from_json(json{{"sigma_vis", 0.2}}, s);
  CHECK(s.sigma_vis == 0.2);
  CHECK(s.n_base == 30);

  PriorConfig p;
  p.alpha = 0.5;
  from_json(json{{"alpha", nullptr}}, p);
  CHECK_FALSE(p.alpha.has_value());
  from_json(json{{"alpha", 0.25}}, p);
  CHECK(p.resolved_alpha(1) == 0.25);
}

TEST_CASE("unknown enum names are rejected") {
  EvalConfig c;
  CHECK_THROWS_AS(from_json(json{{"classifier", "SVM"}}, c), InvalidArgument);
  CHECK_THROWS_AS(from_json(json{{"lr_mode", "all"}}, c), InvalidArgument);
  CHECK_THROWS_AS(cue_from_string("caption"), InvalidArgument);
}

TEST_CASE("report entries") {
  EvalReport r{{0.8, 1.0}, 0.9, 0.196};
  EvalConfig c;
  c.flags = {true, false, false};
  const auto e = report_entry(r, c);
  CHECK(e.at("variant") == "map");
  CHECK(e.at("classifier") == "LR");
  CHECK(e.at("episodes") == 2);
  CHECK(e.at("accuracies").size() == 2);
  CHECK(e.at("config").at("flags").at("use_map") == true);
  const auto doc = report_document(json::array({e}));
  CHECK(doc.at("version") == kReportVersion);
  CHECK(doc.at("reports").size() == 1);
  CHECK(format_mean_ci(0.8503, 0.0041) == "85.03 +- 0.41");
}
