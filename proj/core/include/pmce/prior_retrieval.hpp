#pragma once

// Semantics-guided prior selection and MAP prototype calibration.
//
// A novel class's name embedding is scored against every base-class name
// embedding in the knowledge bank by cosine similarity. The top-k base classes
// form the neighbor set; their visual means are averaged with temperature
// softmax weights into a prior mean, and the empirical support prototype is
// shrunk toward that prior:
//
//   p = alpha * p_init + (1 - alpha) * mu_prior
//
// which is the posterior mode under a spherical Gaussian likelihood around the
// true mean and a spherical Gaussian prior centred on mu_prior, with
// alpha = s_prior^2 / (s_prior^2 + s_like^2).

#include <cstddef>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "pmce/knowledge_bank.hpp"
#include "pmce/types.hpp"

namespace pmce {

struct AlphaFromVariances {
  double sigma_prior_sq = 1.0;
  double sigma_like_sq = 1.0;
};

/// Either a fixed prior weight in [0, 1] or one derived from variances.
using AlphaSpec = std::variant<double, AlphaFromVariances>;

/// What the novel class is matched against when choosing neighbors.
enum class RetrievalCue {
  class_name,   // cosine between name embeddings (default)
  visual_mean,  // cosine between the support prototype and base visual means
};

inline constexpr double kDefaultAlphaOneShot = 0.33;
inline constexpr double kDefaultAlphaMultiShot = 0.7;

/// 0.33 for 1-shot, 0.7 otherwise.
double default_alpha(int k_shot);

struct PriorConfig {
  int k = 7;
  double tau = 1.0;
  std::optional<AlphaSpec> alpha;  // unset: default_alpha(k_shot)
  RetrievalCue cue = RetrievalCue::class_name;

  double resolved_alpha(int k_shot) const;
  /// Throws InvalidArgument when k is outside [1, bank_size], tau <= 0, or
  /// alpha is invalid.
  void validate(std::size_t bank_size) const;
};

/// Cosine similarity of `query` with every row of `keys`. Zero-norm vectors
/// are an error.
Vector cosine_scores(const Vector& query, const Matrix& keys);
Vector cosine_scores(const Vector& query, const KnowledgeBank& bank);

/// Indices of the k largest scores, descending; ties go to the lower index.
std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k);
std::vector<std::size_t> top_k(const Vector& scores, std::size_t k);

/// softmax(scores / tau), computed with the max subtracted.
Vector prior_weights(const Vector& scores, double tau);

Vector prior_mean(const KnowledgeBank& bank, std::span<const std::size_t> neighbors, const Vector& weights);

Vector map_fuse(const Vector& p_init, const Vector& mu_prior, double alpha);

double alpha_from_variances(double sigma_prior_sq, double sigma_like_sq);

/// Intermediate values of one calibration, for diagnostics and tests.
struct Calibration {
  Vector p_init;
  Vector scores;
  std::vector<std::size_t> neighbors;
  Vector weights;
  Vector mu_prior;
  double alpha = 1.0;
  Vector calibrated;
};

/// Full chain: mean of support rows, scoring, top-k, weights, prior mean,
/// fusion. `support` is K x d_v.
Calibration calibrate_prototype_detailed(const Matrix& support, const Vector& class_name_emb,
                                         const KnowledgeBank& bank, const PriorConfig& cfg);

Vector calibrate_prototype(const Matrix& support, const Vector& class_name_emb, const KnowledgeBank& bank,
                           const PriorConfig& cfg);

}  // namespace pmce
