#include "pmce/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pmce/error.hpp"

namespace pmce {

namespace {

Matrix random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

bool clear_of_kinks(const GradcheckInstance& inst, double margin) {
  for (Eigen::Index i = 0; i < inst.batch.visual.rows(); ++i) {
    const auto r = forward(inst.batch.visual.row(i).transpose(), inst.batch.semantics[static_cast<std::size_t>(i)],
                           inst.enhancer.params, inst.enhancer.config);
    if (r.cache.pre_relu.cwiseAbs().minCoeff() < margin) return false;
    const Vector diff = r.v_out - inst.bank.means.row(inst.batch.labels[static_cast<std::size_t>(i)]).transpose();
    if (diff.cwiseAbs().minCoeff() < margin) return false;
  }
  return true;
}

}  // namespace

GradcheckInstance make_gradcheck_instance(const GradcheckConfig& cfg, double margin) {
  if (cfg.batch < 2 || cfg.tokens < 1 || cfg.num_classes < 2) {
    throw InvalidArgument("gradcheck needs batch >= 2, tokens >= 1, num_classes >= 2");
  }
  EnhancerConfig ecfg;
  ecfg.d_v = cfg.d_v;
  ecfg.d_t = cfg.d_t;
  ecfg.heads = cfg.heads;
  ecfg.d_k = cfg.d_k;
  ecfg.validate();

  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    std::mt19937_64 rng(cfg.seed * 1000003ULL + attempt);
    GradcheckInstance inst;
    inst.enhancer.config = ecfg;
    inst.enhancer.params = init_params(ecfg, cfg.seed + attempt);
    auto& p = inst.enhancer.params;
    // Move the LN affine, bias and residual scale off their init values so
    // their gradients are generic.
    p.b_p = random_matrix(ecfg.d_v, 1, rng, 0.5);
    p.ln_gamma = Vector::Ones(ecfg.d_v) + Vector(random_matrix(ecfg.d_v, 1, rng, 0.3));
    p.ln_beta = random_matrix(ecfg.d_v, 1, rng, 0.3);
    p.beta = 0.5 + 0.5 * std::uniform_real_distribution<double>(0.0, 1.0)(rng);

    inst.classifier.w_c = random_matrix(cfg.d_v, cfg.num_classes, rng, 0.5);
    inst.classifier.b_c = random_matrix(cfg.num_classes, 1, rng, 0.5);

    inst.bank.means = random_matrix(cfg.num_classes, cfg.d_v, rng);
    inst.bank.name_embs = random_matrix(cfg.num_classes, cfg.d_t, rng);
    for (int c = 0; c < cfg.num_classes; ++c) inst.bank.class_names.push_back("class_" + std::to_string(c));

    inst.batch.visual = random_matrix(cfg.batch, cfg.d_v, rng);
    for (int i = 0; i < cfg.batch; ++i) {
      inst.batch.semantics.push_back(random_matrix(cfg.tokens, cfg.d_t, rng));
      inst.batch.labels.push_back(static_cast<std::uint32_t>(i % cfg.num_classes));
    }
    if (clear_of_kinks(inst, margin)) return inst;
  }
  throw NumericError("gradcheck: could not draw an instance away from ReLU/L1 kinks");
}

double gradient_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::fabs(analytic), std::fabs(numeric), 1e-6});
  return std::fabs(analytic - numeric) / denom;
}

std::vector<TensorCheck> run_gradcheck(const GradcheckConfig& cfg) {
  auto inst = make_gradcheck_instance(cfg);
  const auto analytic = objective_gradients(inst.batch, inst.bank, inst.enhancer, inst.classifier, cfg.weights);

  struct Span {
    std::string name;
    Eigen::Index offset;
    Eigen::Index size;
  };
  std::vector<Span> spans;
  Eigen::Index offset = 0;
  for_each_tensor(inst.enhancer.params, [&](const std::string& name, const double*, Eigen::Index r, Eigen::Index c) {
    spans.push_back({name, offset, r * c});
    offset += r * c;
  });
  spans.push_back({"classifier.w_c", offset, inst.classifier.w_c.size()});
  offset += inst.classifier.w_c.size();
  spans.push_back({"classifier.b_c", offset, inst.classifier.b_c.size()});

  Vector grad = flatten_trainable(analytic.enhancer, analytic.classifier);
  if (cfg.inject_bug) grad.segment(spans.front().offset, spans.front().size) *= 1.01;

  const Vector theta = flatten_trainable(inst.enhancer.params, inst.classifier);
  auto objective_at = [&](const Vector& flat) {
    EnhancerModel e = inst.enhancer;
    ClassifierParams c = inst.classifier;
    assign_trainable(flat, e.params, c);
    return total_loss(objective_value(inst.batch, inst.bank, e, c, cfg.weights), cfg.weights);
  };

  std::vector<TensorCheck> out;
  for (const auto& s : spans) {
    TensorCheck check{s.name, static_cast<std::size_t>(s.size), 0.0, 0.0, false};
    for (Eigen::Index i = s.offset; i < s.offset + s.size; ++i) {
      Vector plus = theta;
      Vector minus = theta;
      plus[i] += cfg.step;
      minus[i] -= cfg.step;
      const double numeric = (objective_at(plus) - objective_at(minus)) / (2.0 * cfg.step);
      check.max_abs_error = std::max(check.max_abs_error, std::fabs(grad[i] - numeric));
      check.max_rel_error = std::max(check.max_rel_error, gradient_relative_error(grad[i], numeric));
    }
    check.passed = check.max_rel_error < cfg.tolerance;
    out.push_back(std::move(check));
  }
  return out;
}

}  // namespace pmce
