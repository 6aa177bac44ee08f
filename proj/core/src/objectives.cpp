#include "pmce/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "pmce/error.hpp"

namespace pmce {

void LossWeights::validate() const {
  if (!(lambda_rec >= 0.0) || !(lambda_con >= 0.0)) throw InvalidArgument("loss weights must be >= 0");
  if (!(tau_c > 0.0)) throw InvalidArgument("contrastive temperature must be > 0");
}

ClassifierParams ClassifierParams::zeros(int d_v, int num_classes) {
  return {Matrix::Zero(d_v, num_classes), Vector::Zero(num_classes)};
}

bool operator==(const ClassifierParams& a, const ClassifierParams& b) {
  return a.w_c.rows() == b.w_c.rows() && a.w_c.cols() == b.w_c.cols() && a.b_c.size() == b.b_c.size() &&
         a.w_c == b.w_c && a.b_c == b.b_c;
}

LossAndGrad cross_entropy(const Matrix& logits, std::span<const std::uint32_t> labels) {
  const auto batch = logits.rows();
  const auto classes = logits.cols();
  if (static_cast<std::size_t>(batch) != labels.size()) throw DimensionError("cross_entropy: label count mismatch");
  if (batch == 0) throw InvalidArgument("cross_entropy: empty batch");
  LossAndGrad out{0.0, Matrix(batch, classes)};
  for (Eigen::Index i = 0; i < batch; ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    if (y >= static_cast<std::uint32_t>(classes)) {
      throw InvalidArgument("cross_entropy: label " + std::to_string(y) + " out of range for " +
                            std::to_string(classes) + " classes");
    }
    const double shift = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd e = (logits.row(i).array() - shift).exp().matrix();
    const double z = e.sum();
    out.loss += std::log(z) - (logits(i, y) - shift);
    out.grad.row(i) = e / z;
    out.grad(i, y) -= 1.0;
  }
  const double inv_b = 1.0 / static_cast<double>(batch);
  out.loss *= inv_b;
  out.grad *= inv_b;
  return out;
}

LossAndGrad rec_loss(const Matrix& v_out, const Matrix& targets) {
  if (v_out.rows() != targets.rows() || v_out.cols() != targets.cols()) {
    throw DimensionError("rec_loss: targets shape differs from outputs");
  }
  if (v_out.rows() == 0) throw InvalidArgument("rec_loss: empty batch");
  const double inv_b = 1.0 / static_cast<double>(v_out.rows());
  const Matrix diff = v_out - targets;
  return {diff.cwiseAbs().sum() * inv_b, diff.array().sign().matrix() * inv_b};
}

LossAndGrad supcon_loss(const Matrix& embeddings, std::span<const std::uint32_t> labels, double tau_c) {
  const auto batch = embeddings.rows();
  if (static_cast<std::size_t>(batch) != labels.size()) throw DimensionError("supcon_loss: label count mismatch");
  if (batch < 2) throw InvalidArgument("supcon_loss needs a batch of at least 2");
  if (!(tau_c > 0.0)) throw InvalidArgument("supcon_loss: tau_c must be > 0");

  Vector norms(batch);
  Matrix unit(batch, embeddings.cols());
  for (Eigen::Index i = 0; i < batch; ++i) {
    norms[i] = embeddings.row(i).norm();
    if (!(norms[i] > 0.0)) throw InvalidArgument("supcon_loss: row " + std::to_string(i) + " has zero norm");
    unit.row(i) = embeddings.row(i) / norms[i];
  }
  const Matrix sim = (unit * unit.transpose()) / tau_c;

  // coef(i, j) = d loss / d sim(i, j), before the 1/B factor.
  Matrix coef = Matrix::Zero(batch, batch);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < batch; ++i) {
    std::vector<Eigen::Index> positives;
    double shift = -std::numeric_limits<double>::infinity();
    for (Eigen::Index a = 0; a < batch; ++a) {
      if (a == i) continue;
      shift = std::max(shift, sim(i, a));
      if (labels[static_cast<std::size_t>(a)] == labels[static_cast<std::size_t>(i)]) positives.push_back(a);
    }
    if (positives.empty()) continue;

    double denom = 0.0;
    for (Eigen::Index a = 0; a < batch; ++a) {
      if (a != i) denom += std::exp(sim(i, a) - shift);
    }
    const double log_denom = std::log(denom) + shift;
    const double inv_p = 1.0 / static_cast<double>(positives.size());
    for (auto p : positives) {
      loss += inv_p * (log_denom - sim(i, p));
      coef(i, p) -= inv_p;
    }
    for (Eigen::Index a = 0; a < batch; ++a) {
      if (a != i) coef(i, a) += std::exp(sim(i, a) - log_denom);
    }
  }
  const double inv_b = 1.0 / static_cast<double>(batch);

  // sim = U U^T / tau, so dL/dU = (C + C^T) U / tau.
  const Matrix grad_unit = ((coef + coef.transpose()) * unit) * (inv_b / tau_c);
  Matrix grad(batch, embeddings.cols());
  for (Eigen::Index i = 0; i < batch; ++i) {
    const double radial = grad_unit.row(i).dot(unit.row(i));
    grad.row(i) = (grad_unit.row(i) - radial * unit.row(i)) / norms[i];
  }
  return {loss * inv_b, grad};
}

double total_loss(const LossComponents& parts, const LossWeights& weights) {
  return parts.cls + weights.lambda_rec * parts.rec + weights.lambda_con * parts.con;
}

}  // namespace pmce
