#include "pmce/prior_retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pmce/error.hpp"

namespace pmce {

double default_alpha(int k_shot) { return k_shot <= 1 ? kDefaultAlphaOneShot : kDefaultAlphaMultiShot; }

double PriorConfig::resolved_alpha(int k_shot) const {
  if (!alpha) return default_alpha(k_shot);
  if (const auto* fixed = std::get_if<double>(&*alpha)) return *fixed;
  const auto& v = std::get<AlphaFromVariances>(*alpha);
  return alpha_from_variances(v.sigma_prior_sq, v.sigma_like_sq);
}

void PriorConfig::validate(std::size_t bank_size) const {
  if (k < 1 || static_cast<std::size_t>(k) > bank_size) {
    throw InvalidArgument("prior k=" + std::to_string(k) + " outside [1, " + std::to_string(bank_size) + "]");
  }
  if (!(tau > 0.0)) throw InvalidArgument("prior temperature must be > 0");
  if (alpha) {
    if (const auto* fixed = std::get_if<double>(&*alpha)) {
      if (!(*fixed >= 0.0 && *fixed <= 1.0)) throw InvalidArgument("alpha must lie in [0, 1]");
    } else {
      const auto& v = std::get<AlphaFromVariances>(*alpha);
      alpha_from_variances(v.sigma_prior_sq, v.sigma_like_sq);
    }
  }
}

Vector cosine_scores(const Vector& query, const Matrix& keys) {
  if (query.size() != keys.cols()) {
    throw DimensionError("cosine_scores: query has " + std::to_string(query.size()) + " entries, keys have " +
                         std::to_string(keys.cols()));
  }
  const double qn = query.norm();
  if (!(qn > 0.0)) throw InvalidArgument("cosine_scores: query vector has zero norm");
  Vector out(keys.rows());
  for (Eigen::Index j = 0; j < keys.rows(); ++j) {
    const double kn = keys.row(j).norm();
    if (!(kn > 0.0)) throw InvalidArgument("cosine_scores: key row " + std::to_string(j) + " has zero norm");
    out[j] = std::clamp(keys.row(j).dot(query) / (qn * kn), -1.0, 1.0);
  }
  return out;
}

Vector cosine_scores(const Vector& query, const KnowledgeBank& bank) { return cosine_scores(query, bank.name_embs); }

std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) {
  if (k < 1 || k > scores.size()) {
    throw InvalidArgument("top_k: k=" + std::to_string(k) + " outside [1, " + std::to_string(scores.size()) + "]");
  }
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto before = [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), before);
  idx.resize(k);
  return idx;
}

std::vector<std::size_t> top_k(const Vector& scores, std::size_t k) {
  return top_k(std::span<const double>(scores.data(), static_cast<std::size_t>(scores.size())), k);
}

Vector prior_weights(const Vector& scores, double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("prior_weights: tau must be > 0");
  if (scores.size() == 0) throw InvalidArgument("prior_weights: empty score vector");
  const double shift = scores.maxCoeff();
  Vector w = ((scores.array() - shift) / tau).exp().matrix();
  return w / w.sum();
}

Vector prior_mean(const KnowledgeBank& bank, std::span<const std::size_t> neighbors, const Vector& weights) {
  if (neighbors.size() != static_cast<std::size_t>(weights.size())) {
    throw DimensionError("prior_mean: neighbor and weight counts differ");
  }
  Vector mu = Vector::Zero(bank.means.cols());
  for (std::size_t i = 0; i < neighbors.size(); ++i) {
    if (neighbors[i] >= bank.size()) {
      throw InvalidArgument("prior_mean: neighbor index " + std::to_string(neighbors[i]) + " out of range");
    }
    mu += weights[static_cast<Eigen::Index>(i)] * bank.means.row(static_cast<Eigen::Index>(neighbors[i])).transpose();
  }
  return mu;
}

Vector map_fuse(const Vector& p_init, const Vector& mu_prior, double alpha) {
  if (p_init.size() != mu_prior.size()) throw DimensionError("map_fuse: dimension mismatch");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidArgument("map_fuse: alpha must lie in [0, 1]");
  return alpha * p_init + (1.0 - alpha) * mu_prior;
}

double alpha_from_variances(double sigma_prior_sq, double sigma_like_sq) {
  if (!(sigma_prior_sq > 0.0) || !(sigma_like_sq > 0.0)) {
    throw InvalidArgument("alpha_from_variances: variances must be > 0");
  }
  return sigma_prior_sq / (sigma_prior_sq + sigma_like_sq);
}

Calibration calibrate_prototype_detailed(const Matrix& support, const Vector& class_name_emb,
                                         const KnowledgeBank& bank, const PriorConfig& cfg) {
  if (support.rows() < 1) throw InvalidArgument("calibrate_prototype: empty support set");
  if (static_cast<std::size_t>(support.cols()) != bank.d_v()) {
    throw DimensionError("calibrate_prototype: support dim differs from bank d_v");
  }
  cfg.validate(bank.size());

  Calibration c;
  c.p_init = support.colwise().mean().transpose();
  c.scores = cfg.cue == RetrievalCue::class_name ? cosine_scores(class_name_emb, bank.name_embs)
                                                 : cosine_scores(c.p_init, bank.means);
  c.neighbors = top_k(c.scores, static_cast<std::size_t>(cfg.k));
  Vector selected(static_cast<Eigen::Index>(c.neighbors.size()));
  for (std::size_t i = 0; i < c.neighbors.size(); ++i) {
    selected[static_cast<Eigen::Index>(i)] = c.scores[static_cast<Eigen::Index>(c.neighbors[i])];
  }
  c.weights = prior_weights(selected, cfg.tau);
  c.mu_prior = prior_mean(bank, c.neighbors, c.weights);
  c.alpha = cfg.resolved_alpha(static_cast<int>(support.rows()));
  c.calibrated = map_fuse(c.p_init, c.mu_prior, c.alpha);
  return c;
}

Vector calibrate_prototype(const Matrix& support, const Vector& class_name_emb, const KnowledgeBank& bank,
                           const PriorConfig& cfg) {
  return calibrate_prototype_detailed(support, class_name_emb, bank, cfg).calibrated;
}

}  // namespace pmce
