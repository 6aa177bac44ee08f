#include <benchmark/benchmark.h>

#include "pmce/episodic_eval.hpp"
#include "pmce/knowledge_bank.hpp"
#include "pmce/synthetic.hpp"

namespace {

struct World {
  pmce::SynthData data;
  pmce::KnowledgeBank bank;
  pmce::EnhancerModel enhancer;

  World() {
    data = pmce::generate(pmce::SynthConfig{});
    bank = pmce::build_bank(data.base);
    enhancer.config = pmce::EnhancerConfig::for_dims(32, 16, 4);
    enhancer.params = pmce::init_params(enhancer.config, 0);
  }
};

const World& world() {
  static const World w;
  return w;
}

// arg 0: classifier (0 LR, 1 EU, 2 CO); arg 1: k_shot
void BM_Episode(benchmark::State& state) {
  const auto& w = world();
  pmce::EvalConfig cfg;
  cfg.classifier = static_cast<pmce::ClassifierKind>(state.range(0));
  cfg.k_shot = static_cast<int>(state.range(1));
  std::uint64_t index = 0;
  for (auto _ : state) {
    const auto ep = pmce::sample_episode(w.data.novel, cfg, index++);
    benchmark::DoNotOptimize(pmce::run_episode(ep, w.bank, &w.enhancer, cfg));
  }
}

void BM_LogisticRegression(benchmark::State& state) {
  const auto n = static_cast<int>(state.range(0));
  pmce::Matrix x = pmce::Matrix::Random(n, 32);
  std::vector<std::uint32_t> y;
  for (int i = 0; i < n; ++i) y.push_back(static_cast<std::uint32_t>(i % 5));
  for (auto _ : state) benchmark::DoNotOptimize(pmce::fit_logistic_regression(x, y, 5, 1.0));
}

}  // namespace

BENCHMARK(BM_Episode)->Args({0, 1})->Args({1, 1})->Args({2, 1})->Args({0, 5});
BENCHMARK(BM_LogisticRegression)->Arg(5)->Arg(25);
