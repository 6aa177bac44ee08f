#pragma once

// Base-class training of the enhancer together with an auxiliary linear
// classifier. Backbone features and caption embeddings are inputs only; the
// trainable parameters are the enhancer's and the classifier's, updated by a
// single Adam optimizer over their concatenation.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pmce/enhancer.hpp"
#include "pmce/feature_store.hpp"
#include "pmce/knowledge_bank.hpp"
#include "pmce/objectives.hpp"
#include "pmce/types.hpp"

namespace pmce {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Vector m;
  Vector v;
  std::int64_t t = 0;

  explicit AdamState(Eigen::Index n = 0) : m(Vector::Zero(n)), v(Vector::Zero(n)) {}
};

/// One bias-corrected Adam update of `params` in place.
void adam_step(Vector& params, const Vector& grads, AdamState& state, const AdamConfig& cfg);

struct TrainConfig {
  int epochs = 50;
  int batch_size = 128;
  AdamConfig adam;
  std::uint64_t seed = 0;
  LossWeights weights;
  int heads = 4;
  int d_k = 0;  // 0: d_v / heads

  void validate() const;
  EnhancerConfig enhancer_config(int d_v, int d_t) const;
};

struct EpochLog {
  int epoch = 0;
  double total = 0.0;
  double cls = 0.0;
  double rec = 0.0;
  double con = 0.0;
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
};

/// One JSON object per line, without the trailing newline.
std::string to_json_line(const EpochLog& e);

/// A mini-batch: B visual features, B semantic contexts (T x d_t each) and
/// base-class labels.
struct TrainBatch {
  Matrix visual;
  std::vector<Matrix> semantics;
  std::vector<std::uint32_t> labels;
};

struct ObjectiveGradients {
  LossComponents parts;
  double total = 0.0;
  EnhancerParams enhancer;
  ClassifierParams classifier;
};

/// Loss terms of the total objective on one batch. The reconstruction target
/// of sample i is bank.means[labels[i]]; the contrastive embedding of sample i
/// is the token mean of its projected semantics. Batches of one sample have no
/// contrastive term.
LossComponents objective_value(const TrainBatch& batch, const KnowledgeBank& bank, const EnhancerModel& enhancer,
                               const ClassifierParams& classifier, const LossWeights& weights);

ObjectiveGradients objective_gradients(const TrainBatch& batch, const KnowledgeBank& bank,
                                       const EnhancerModel& enhancer, const ClassifierParams& classifier,
                                       const LossWeights& weights);

/// [enhancer flat, w_c row-major, b_c]
Vector flatten_trainable(const EnhancerParams& enhancer, const ClassifierParams& classifier);
void assign_trainable(const Vector& flat, EnhancerParams& enhancer, ClassifierParams& classifier);

struct TrainResult {
  EnhancerModel enhancer;
  ClassifierParams classifier;
  TrainLog log;
};

using EpochCallback = std::function<void(const EpochLog&)>;

/// Shuffles with a PRNG seeded by cfg.seed every epoch, keeps the last partial
/// batch, and uses each record's own caption embedding as a single semantic
/// token. Throws NumericError naming the epoch and batch if a loss stops being
/// finite.
TrainResult train(const DatasetSplit& base, const KnowledgeBank& bank, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

}  // namespace pmce
