#pragma once

// Training losses for the enhancer and the auxiliary base-class classifier.
// Every loss is a batch mean and returns its exact gradient with respect to
// its matrix input.

#include <cstdint>
#include <span>

#include "pmce/types.hpp"

namespace pmce {

struct LossWeights {
  double lambda_rec = 1.0;
  double lambda_con = 1.0;
  double tau_c = 0.1;

  void validate() const;
};

/// Linear softmax classifier over base classes: logits = v W_c + b_c.
struct ClassifierParams {
  Matrix w_c;  // d_v x num_classes
  Vector b_c;  // num_classes

  static ClassifierParams zeros(int d_v, int num_classes);

  friend bool operator==(const ClassifierParams& a, const ClassifierParams& b);
};

struct LossAndGrad {
  double loss = 0.0;
  Matrix grad;  // same shape as the input
};

/// Mean negative log-softmax of the labelled logit.
LossAndGrad cross_entropy(const Matrix& logits, std::span<const std::uint32_t> labels);

/// Mean L1 distance between rows of `v_out` and `targets`; sign(0) = 0.
LossAndGrad rec_loss(const Matrix& v_out, const Matrix& targets);

/// Supervised contrastive loss over L2-normalized rows. Anchors without an
/// in-batch positive contribute zero but still count in the 1/B mean.
LossAndGrad supcon_loss(const Matrix& embeddings, std::span<const std::uint32_t> labels, double tau_c);

struct LossComponents {
  double cls = 0.0;
  double rec = 0.0;
  double con = 0.0;
};

double total_loss(const LossComponents& parts, const LossWeights& weights);

}  // namespace pmce
