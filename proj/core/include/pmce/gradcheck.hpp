#pragma once

// Central finite-difference check of the analytic gradients of the total
// training objective, per parameter tensor, on small random instances.

#include <cstdint>
#include <string>
#include <vector>

#include "pmce/knowledge_bank.hpp"
#include "pmce/objectives.hpp"
#include "pmce/trainer.hpp"

namespace pmce {

struct GradcheckConfig {
  int d_v = 8;
  int d_t = 6;
  int heads = 2;
  int d_k = 4;
  int tokens = 3;
  int batch = 5;
  int num_classes = 3;
  std::uint64_t seed = 0;
  double step = 1e-4;
  double tolerance = 1e-4;
  LossWeights weights;
  /// Negative control: perturbs the analytic w_p gradient by 1% so the check
  /// must report a failure.
  bool inject_bug = false;
};

struct GradcheckInstance {
  TrainBatch batch;
  KnowledgeBank bank;
  EnhancerModel enhancer;
  ClassifierParams classifier;
};

/// Random instance with every |v_out - target| and every pre-ReLU activation
/// at least `margin` away from the kink; redraws otherwise.
GradcheckInstance make_gradcheck_instance(const GradcheckConfig& cfg, double margin = 1e-3);

struct TensorCheck {
  std::string name;
  std::size_t size = 0;
  double max_abs_error = 0.0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// |a - n| / max(|a|, |n|, 1e-6)
double gradient_relative_error(double analytic, double numeric);

std::vector<TensorCheck> run_gradcheck(const GradcheckConfig& cfg);

}  // namespace pmce
