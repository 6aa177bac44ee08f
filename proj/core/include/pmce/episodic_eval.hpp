#pragma once

// Inductive N-way K-shot evaluation.
//
// For each sampled episode, every novel class gets a prototype (the support
// mean, optionally MAP-calibrated toward a retrieved base-class prior), which
// is optionally enhanced with the averaged support captions. Each query is
// optionally enhanced with its own caption and classified on its own; no query
// ever influences another query's prediction.

#include <cstdint>
#include <string>
#include <vector>

#include "pmce/enhancer.hpp"
#include "pmce/feature_store.hpp"
#include "pmce/knowledge_bank.hpp"
#include "pmce/prior_retrieval.hpp"
#include "pmce/types.hpp"

namespace pmce {

enum class ClassifierKind { LR, EU, CO };

/// What the logistic-regression classifier is fitted on.
enum class LrFitMode {
  prototypes,  // one point per class: the final prototype
  supports,    // every support sample, calibrated and enhanced individually
};

struct AblationFlags {
  bool use_map = true;
  bool enhance_support = true;
  bool enhance_query = true;

  /// e.g. "map+support+query", "baseline"
  std::string label() const;
  bool needs_enhancer() const noexcept { return enhance_support || enhance_query; }

  /// All eight on/off combinations, baseline first.
  static std::vector<AblationFlags> lattice();

  friend bool operator==(const AblationFlags&, const AblationFlags&) = default;
};

struct EvalConfig {
  int n_way = 5;
  int k_shot = 1;
  int m_query = 15;
  int episodes = 600;
  std::uint64_t seed = 0;
  PriorConfig prior;
  ClassifierKind classifier = ClassifierKind::LR;
  AblationFlags flags;
  double lr_l2 = 1.0;
  LrFitMode lr_mode = LrFitMode::prototypes;

  /// Checks counts and that `novel` can supply every episode.
  void validate(const DatasetSplit& novel) const;
};

struct Episode {
  std::vector<std::uint32_t> class_ids;  // N indices into the novel split
  std::vector<FeatureRecord> support;    // class-major, K per class
  std::vector<std::uint32_t> support_labels;
  std::vector<FeatureRecord> query;  // class-major, M per class
  std::vector<std::uint32_t> query_labels;
  Matrix name_embs;  // N x d_t
};

/// Classes uniformly without replacement, then K + M records per class
/// without replacement (first K are support). The PRNG is seeded from
/// (cfg.seed, episode_index) only.
Episode sample_episode(const DatasetSplit& novel, const EvalConfig& cfg, std::uint64_t episode_index);

/// Mean of the K support caption embeddings (rows).
Vector aggregate_support_semantics(const Matrix& support_caption_embs);

struct LogisticModel {
  Matrix weights;  // d x C
  Vector bias;     // C
  bool converged = false;
  int iterations = 0;
  double grad_inf_norm = 0.0;
};

inline constexpr double kLrGradTolerance = 1e-6;
inline constexpr int kLrMaxIterations = 1000;

/// Multinomial logistic regression minimizing
///   mean_i CE(x_i W + b, y_i) + l2/2 ||W||^2
/// from zero by accelerated full-batch gradient descent with restart, until
/// ||grad||_inf < 1e-6 or 1000 iterations.
LogisticModel fit_logistic_regression(const Matrix& points, const std::vector<std::uint32_t>& labels,
                                      int num_classes, double l2);

Matrix predict_proba(const LogisticModel& model, const Matrix& queries);

/// argmax per row, lowest index on ties.
std::vector<std::uint32_t> argmax_rows(const Matrix& scores);

struct LrClassification {
  std::vector<std::uint32_t> labels;
  Matrix probabilities;
  LogisticModel model;
};

/// Fits on one point per class (row c has label c) and predicts `queries`.
LrClassification classify_lr(const Matrix& prototypes, const Matrix& queries, double l2);

enum class Metric { EU, CO };

std::vector<std::uint32_t> classify_nearest(const Matrix& prototypes, const Matrix& queries, Metric metric);

/// Predicted episode label (0..N-1) for every query of `ep`.
std::vector<std::uint32_t> predict_episode(const Episode& ep, const KnowledgeBank& bank,
                                           const EnhancerModel* enhancer, const EvalConfig& cfg);

/// Fraction of queries predicted correctly.
double run_episode(const Episode& ep, const KnowledgeBank& bank, const EnhancerModel* enhancer,
                   const EvalConfig& cfg);

/// Accuracy of episodes 0..cfg.episodes-1, in index order, using `jobs`
/// worker threads. The result does not depend on `jobs`.
std::vector<double> evaluate_episodes(const DatasetSplit& novel, const KnowledgeBank& bank,
                                      const EnhancerModel* enhancer, const EvalConfig& cfg, int jobs = 1);

struct EvalReport {
  std::vector<double> accuracies;
  double mean = 0.0;
  double ci95_half_width = 0.0;
};

/// mean and 1.96 * sample std / sqrt(E); needs E >= 2.
EvalReport aggregate_report(const std::vector<double>& accuracies);

std::string to_string(ClassifierKind kind);
ClassifierKind classifier_from_string(const std::string& name);

}  // namespace pmce
