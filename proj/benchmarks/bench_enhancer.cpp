#include <benchmark/benchmark.h>

#include <random>

#include "pmce/enhancer.hpp"

namespace {

using pmce::Matrix;
using pmce::Vector;

struct Inputs {
  pmce::EnhancerConfig cfg;
  pmce::EnhancerParams params;
  Vector v;
  Matrix s;
};

Inputs make_inputs(int d_v, int d_t, int tokens) {
  Inputs in;
  in.cfg = pmce::EnhancerConfig::for_dims(d_v, d_t, 4);
  in.params = pmce::init_params(in.cfg, 0);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  in.v.resize(d_v);
  for (auto& x : in.v) x = n(rng);
  in.s.resize(tokens, d_t);
  for (auto& x : in.s.reshaped()) x = n(rng);
  return in;
}

// args: d_v, d_t, tokens
void BM_EnhancerForward(benchmark::State& state) {
  const auto in = make_inputs(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)),
                              static_cast<int>(state.range(2)));
  for (auto _ : state) benchmark::DoNotOptimize(pmce::enhance(in.v, in.s, in.params, in.cfg));
}

void BM_EnhancerForwardBackward(benchmark::State& state) {
  const auto in = make_inputs(static_cast<int>(state.range(0)), static_cast<int>(state.range(1)),
                              static_cast<int>(state.range(2)));
  const Vector g = Vector::Ones(in.cfg.d_v);
  for (auto _ : state) {
    const auto r = pmce::forward(in.v, in.s, in.params, in.cfg);
    benchmark::DoNotOptimize(pmce::backward(r.cache, in.params, g));
  }
}

}  // namespace

BENCHMARK(BM_EnhancerForward)->Args({32, 16, 1})->Args({32, 16, 8})->Args({640, 512, 1})->Args({640, 512, 8});
BENCHMARK(BM_EnhancerForwardBackward)->Args({32, 16, 1})->Args({32, 16, 8})->Args({640, 512, 1});
