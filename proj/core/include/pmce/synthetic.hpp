#pragma once

// Synthetic stores whose class-name embeddings and visual class means share a
// latent concept, so that semantic retrieval finds visually close base
// classes:
//
//   c_j ~ N(0, I_{d_s})                      concept of class j
//   mu_j = A c_j                             visual class mean
//   s_j  = B c_j + sigma_name * eps          class-name embedding
//   x    = mu_y + sigma_vis * eta            visual feature
//   cap  = s_y + C (x - mu_y) + sigma_cap * eps'
//
// A (d_v x d_s) and B (d_t x d_s) have orthonormal columns from a seeded QR;
// C is d_t x d_v Gaussian scaled by 0.3 / sqrt(d_v). Base and novel classes
// draw concepts from the same distribution but are distinct classes.

#include <cstdint>

#include "pmce/feature_store.hpp"
#include "pmce/prior_retrieval.hpp"
#include "pmce/types.hpp"

namespace pmce {

struct SynthConfig {
  int n_base = 30;
  int n_novel = 10;
  int per_class = 60;
  int d_v = 32;
  int d_t = 16;
  int d_s = 8;
  double sigma_vis = 0.65;
  double sigma_name = 0.1;
  double sigma_cap = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthData {
  DatasetSplit base;
  DatasetSplit novel;
  Matrix base_true_means;   // n_base x d_v, before float rounding
  Matrix novel_true_means;  // n_novel x d_v
};

SynthData generate(const SynthConfig& cfg);

/// Average distance to the true novel class mean of (a) the retrieved prior
/// mean and (b) a single noisy sample, over all novel classes and records.
struct PriorDiagnostic {
  double prior_distance = 0.0;
  double sample_distance = 0.0;
};

PriorDiagnostic prior_diagnostic(const SynthData& data, const PriorConfig& prior);

}  // namespace pmce
