#include "pmce/episodic_eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "pmce/error.hpp"
#include "pmce/stats.hpp"

namespace pmce {

std::string AblationFlags::label() const {
  std::string out;
  auto add = [&](const char* part) {
    if (!out.empty()) out += '+';
    out += part;
  };
  if (use_map) add("map");
  if (enhance_support) add("support");
  if (enhance_query) add("query");
  return out.empty() ? "baseline" : out;
}

std::vector<AblationFlags> AblationFlags::lattice() {
  std::vector<AblationFlags> out;
  for (int bits = 0; bits < 8; ++bits) {
    out.push_back({(bits & 1) != 0, (bits & 2) != 0, (bits & 4) != 0});
  }
  return out;
}

void EvalConfig::validate(const DatasetSplit& novel) const {
  if (episodes < 1) throw InvalidArgument("episodes must be >= 1");
  if (n_way < 1 || k_shot < 1 || m_query < 1) throw InvalidArgument("n_way, k_shot and m_query must be >= 1");
  if (classifier == ClassifierKind::LR && n_way < 2) throw InvalidArgument("logistic regression needs n_way >= 2");
  if (!(lr_l2 > 0.0)) throw InvalidArgument("lr_l2 must be > 0");
  if (novel.num_classes() < static_cast<std::size_t>(n_way)) {
    throw InvalidArgument("novel split has " + std::to_string(novel.num_classes()) + " classes, need " +
                          std::to_string(n_way));
  }
  const auto groups = novel.records_by_class();
  const auto need = static_cast<std::size_t>(k_shot + m_query);
  for (std::size_t c = 0; c < groups.size(); ++c) {
    if (groups[c].size() < need) {
      throw InvalidArgument("novel class " + std::to_string(c) + " has " + std::to_string(groups[c].size()) +
                            " records, need " + std::to_string(need));
    }
  }
}

Episode sample_episode(const DatasetSplit& novel, const EvalConfig& cfg, std::uint64_t episode_index) {
  cfg.validate(novel);
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                    static_cast<std::uint32_t>(episode_index), static_cast<std::uint32_t>(episode_index >> 32)};
  std::mt19937_64 rng(seq);

  // Partial Fisher-Yates: the first `take` entries become a uniform sample.
  auto draw = [&rng](std::vector<std::size_t>& pool, std::size_t take) {
    for (std::size_t i = 0; i < take; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
  };

  std::vector<std::size_t> classes(novel.num_classes());
  std::iota(classes.begin(), classes.end(), 0);
  draw(classes, static_cast<std::size_t>(cfg.n_way));

  const auto groups = novel.records_by_class();
  Episode ep;
  ep.name_embs.resize(cfg.n_way, static_cast<Eigen::Index>(novel.d_t()));
  for (int c = 0; c < cfg.n_way; ++c) {
    const auto cls = classes[static_cast<std::size_t>(c)];
    ep.class_ids.push_back(static_cast<std::uint32_t>(cls));
    ep.name_embs.row(c) = novel.name_embs.row(static_cast<Eigen::Index>(cls)).cast<double>();
    auto pool = groups[cls];
    draw(pool, static_cast<std::size_t>(cfg.k_shot + cfg.m_query));
    for (int i = 0; i < cfg.k_shot; ++i) {
      ep.support.push_back(novel.records[pool[static_cast<std::size_t>(i)]]);
      ep.support_labels.push_back(static_cast<std::uint32_t>(c));
    }
    for (int i = 0; i < cfg.m_query; ++i) {
      ep.query.push_back(novel.records[pool[static_cast<std::size_t>(cfg.k_shot + i)]]);
      ep.query_labels.push_back(static_cast<std::uint32_t>(c));
    }
  }
  return ep;
}

Vector aggregate_support_semantics(const Matrix& support_caption_embs) {
  if (support_caption_embs.rows() < 1) throw InvalidArgument("aggregate_support_semantics: no support captions");
  return support_caption_embs.colwise().mean().transpose();
}

namespace {

Matrix softmax_rows(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const Eigen::RowVectorXd e = (logits.row(i).array() - logits.row(i).maxCoeff()).exp().matrix();
    p.row(i) = e / e.sum();
  }
  return p;
}

struct LrGradient {
  Matrix weights;
  Vector bias;
  double inf_norm() const { return std::max(weights.cwiseAbs().maxCoeff(), bias.cwiseAbs().maxCoeff()); }
};

LrGradient lr_gradient(const Matrix& x, const Matrix& onehot, const Matrix& w, const Vector& b, double l2) {
  Matrix logits = x * w;
  logits.rowwise() += b.transpose();
  const Matrix residual = (softmax_rows(logits) - onehot) / static_cast<double>(x.rows());
  return {x.transpose() * residual + l2 * w, residual.colwise().sum().transpose()};
}

}  // namespace

LogisticModel fit_logistic_regression(const Matrix& points, const std::vector<std::uint32_t>& labels,
                                      int num_classes, double l2) {
  const auto n = points.rows();
  const auto d = points.cols();
  if (n < 1 || static_cast<std::size_t>(n) != labels.size()) throw DimensionError("logistic regression: label count");
  if (num_classes < 2) throw InvalidArgument("logistic regression needs at least 2 classes");
  if (!(l2 > 0.0)) throw InvalidArgument("logistic regression needs l2 > 0");

  Matrix onehot = Matrix::Zero(n, num_classes);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto y = labels[static_cast<std::size_t>(i)];
    if (y >= static_cast<std::uint32_t>(num_classes)) throw InvalidArgument("logistic regression: label out of range");
    onehot(i, y) = 1.0;
  }

  // The softmax Hessian is bounded by I/2, so the gradient of the mean loss is
  // Lipschitz with constant at most (||X||_F^2 + n) / (2n) + l2.
  const double lipschitz = 0.5 * (points.squaredNorm() + static_cast<double>(n)) / static_cast<double>(n) + l2;
  const double step = 1.0 / lipschitz;

  LogisticModel m;
  m.weights = Matrix::Zero(d, num_classes);
  m.bias = Vector::Zero(num_classes);
  Matrix yw = m.weights;
  Vector yb = m.bias;
  double t = 1.0;

  for (int it = 0; it <= kLrMaxIterations; ++it) {
    const auto g = lr_gradient(points, onehot, m.weights, m.bias, l2);
    m.iterations = it;
    m.grad_inf_norm = g.inf_norm();
    if (m.grad_inf_norm < kLrGradTolerance) {
      m.converged = true;
      break;
    }
    if (it == kLrMaxIterations) break;

    const auto gy = lr_gradient(points, onehot, yw, yb, l2);
    const Matrix next_w = yw - step * gy.weights;
    const Vector next_b = yb - step * gy.bias;
    // Restart momentum when it points uphill.
    const double uphill = (gy.weights.cwiseProduct(next_w - m.weights)).sum() + gy.bias.dot(next_b - m.bias);
    double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    double momentum = (t - 1.0) / t_next;
    if (uphill > 0.0) {
      t_next = 1.0;
      momentum = 0.0;
    }
    yw = next_w + momentum * (next_w - m.weights);
    yb = next_b + momentum * (next_b - m.bias);
    m.weights = next_w;
    m.bias = next_b;
    t = t_next;
  }
  return m;
}

Matrix predict_proba(const LogisticModel& model, const Matrix& queries) {
  if (queries.cols() != model.weights.rows()) throw DimensionError("predict_proba: query width mismatch");
  Matrix logits = queries * model.weights;
  logits.rowwise() += model.bias.transpose();
  return softmax_rows(logits);
}

std::vector<std::uint32_t> argmax_rows(const Matrix& scores) {
  std::vector<std::uint32_t> out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index j = 1; j < scores.cols(); ++j) {
      if (scores(i, j) > scores(i, best)) best = j;
    }
    out[static_cast<std::size_t>(i)] = static_cast<std::uint32_t>(best);
  }
  return out;
}

LrClassification classify_lr(const Matrix& prototypes, const Matrix& queries, double l2) {
  if (prototypes.rows() < 2) throw InvalidArgument("classify_lr needs at least 2 prototypes");
  std::vector<std::uint32_t> labels(static_cast<std::size_t>(prototypes.rows()));
  std::iota(labels.begin(), labels.end(), 0U);
  LrClassification out;
  out.model = fit_logistic_regression(prototypes, labels, static_cast<int>(prototypes.rows()), l2);
  out.probabilities = predict_proba(out.model, queries);
  out.labels = argmax_rows(out.probabilities);
  return out;
}

std::vector<std::uint32_t> classify_nearest(const Matrix& prototypes, const Matrix& queries, Metric metric) {
  if (prototypes.rows() < 1) throw InvalidArgument("classify_nearest needs at least 1 prototype");
  if (prototypes.cols() != queries.cols()) throw DimensionError("classify_nearest: width mismatch");
  Matrix scores(queries.rows(), prototypes.rows());
  if (metric == Metric::EU) {
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
      for (Eigen::Index c = 0; c < prototypes.rows(); ++c) {
        scores(q, c) = -(queries.row(q) - prototypes.row(c)).squaredNorm();
      }
    }
  } else {
    Vector proto_norms(prototypes.rows());
    for (Eigen::Index c = 0; c < prototypes.rows(); ++c) {
      proto_norms[c] = prototypes.row(c).norm();
      if (!(proto_norms[c] > 0.0)) throw InvalidArgument("cosine classifier: zero-norm prototype");
    }
    for (Eigen::Index q = 0; q < queries.rows(); ++q) {
      const double qn = queries.row(q).norm();
      if (!(qn > 0.0)) throw InvalidArgument("cosine classifier: zero-norm query");
      for (Eigen::Index c = 0; c < prototypes.rows(); ++c) {
        scores(q, c) = queries.row(q).dot(prototypes.row(c)) / (qn * proto_norms[c]);
      }
    }
  }
  return argmax_rows(scores);
}

std::vector<std::uint32_t> predict_episode(const Episode& ep, const KnowledgeBank& bank,
                                           const EnhancerModel* enhancer, const EvalConfig& cfg) {
  const auto n_way = static_cast<Eigen::Index>(ep.class_ids.size());
  if (n_way < 1 || ep.name_embs.rows() != n_way) throw DimensionError("episode class count mismatch");
  if (ep.support.size() != ep.support_labels.size() || ep.query.size() != ep.query_labels.size()) {
    throw DimensionError("episode labels do not match records");
  }
  if (cfg.flags.needs_enhancer() && enhancer == nullptr) {
    throw InvalidArgument("enhancement requested but no enhancer parameters were given");
  }
  const auto d_v = static_cast<Eigen::Index>(bank.d_v());
  const auto d_t = ep.name_embs.cols();

  auto enhance_one = [&](const Vector& v, const Vector& s) {
    return enhance(v, s.transpose(), enhancer->params, enhancer->config);
  };

  // Gather supports per class.
  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(n_way));
  for (std::size_t i = 0; i < ep.support.size(); ++i) {
    if (ep.support_labels[i] >= static_cast<std::uint32_t>(n_way)) throw InvalidArgument("support label out of range");
    members[ep.support_labels[i]].push_back(i);
  }

  Matrix train_points;
  std::vector<std::uint32_t> train_labels;
  const bool per_support = cfg.classifier == ClassifierKind::LR && cfg.lr_mode == LrFitMode::supports;
  if (per_support) train_points.resize(static_cast<Eigen::Index>(ep.support.size()), d_v);
  else train_points.resize(n_way, d_v);

  Eigen::Index row = 0;
  for (Eigen::Index c = 0; c < n_way; ++c) {
    const auto& idx = members[static_cast<std::size_t>(c)];
    if (idx.empty()) throw InvalidArgument("episode class " + std::to_string(c) + " has no support samples");
    Matrix support(static_cast<Eigen::Index>(idx.size()), d_v);
    Matrix captions(static_cast<Eigen::Index>(idx.size()), d_t);
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto& rec = ep.support[idx[k]];
      if (rec.visual.size() != d_v || rec.caption_emb.size() != d_t) throw DimensionError("support record dims");
      support.row(static_cast<Eigen::Index>(k)) = rec.visual.cast<double>().transpose();
      captions.row(static_cast<Eigen::Index>(k)) = rec.caption_emb.cast<double>().transpose();
    }

    Vector prototype = support.colwise().mean().transpose();
    Vector mu_prior;
    double alpha = 1.0;
    if (cfg.flags.use_map) {
      auto cal = calibrate_prototype_detailed(support, ep.name_embs.row(c).transpose(), bank, cfg.prior);
      prototype = std::move(cal.calibrated);
      mu_prior = std::move(cal.mu_prior);
      alpha = cal.alpha;
    }

    if (per_support) {
      for (Eigen::Index k = 0; k < support.rows(); ++k) {
        Vector x = support.row(k).transpose();
        if (cfg.flags.use_map) x = map_fuse(x, mu_prior, alpha);
        if (cfg.flags.enhance_support) x = enhance_one(x, captions.row(k).transpose());
        train_points.row(row++) = x.transpose();
        train_labels.push_back(static_cast<std::uint32_t>(c));
      }
    } else {
      if (cfg.flags.enhance_support) prototype = enhance_one(prototype, aggregate_support_semantics(captions));
      train_points.row(c) = prototype.transpose();
      train_labels.push_back(static_cast<std::uint32_t>(c));
    }
  }

  Matrix queries(static_cast<Eigen::Index>(ep.query.size()), d_v);
  for (std::size_t q = 0; q < ep.query.size(); ++q) {
    const auto& rec = ep.query[q];
    if (rec.visual.size() != d_v || rec.caption_emb.size() != d_t) throw DimensionError("query record dims");
    Vector z = rec.visual.cast<double>();
    if (cfg.flags.enhance_query) z = enhance_one(z, rec.caption_emb.cast<double>());
    queries.row(static_cast<Eigen::Index>(q)) = z.transpose();
  }

  switch (cfg.classifier) {
    case ClassifierKind::LR: {
      const auto model = fit_logistic_regression(train_points, train_labels, static_cast<int>(n_way), cfg.lr_l2);
      return argmax_rows(predict_proba(model, queries));
    }
    case ClassifierKind::EU:
      return classify_nearest(train_points, queries, Metric::EU);
    case ClassifierKind::CO:
      return classify_nearest(train_points, queries, Metric::CO);
  }
  throw InvalidArgument("unknown classifier");
}

double run_episode(const Episode& ep, const KnowledgeBank& bank, const EnhancerModel* enhancer,
                   const EvalConfig& cfg) {
  if (ep.query.empty()) throw InvalidArgument("episode has no queries");
  const auto predicted = predict_episode(ep, bank, enhancer, cfg);
  std::size_t correct = 0;
  for (std::size_t q = 0; q < predicted.size(); ++q) correct += predicted[q] == ep.query_labels[q] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

std::vector<double> evaluate_episodes(const DatasetSplit& novel, const KnowledgeBank& bank,
                                      const EnhancerModel* enhancer, const EvalConfig& cfg, int jobs) {
  cfg.validate(novel);
  cfg.prior.validate(bank.size());
  if (novel.d_v() != bank.d_v()) throw DimensionError("novel split d_v differs from knowledge bank");
  if (cfg.flags.needs_enhancer()) {
    if (enhancer == nullptr) throw InvalidArgument("enhancement requested but no enhancer parameters were given");
    if (enhancer->config.d_v != static_cast<int>(novel.d_v()) || enhancer->config.d_t != static_cast<int>(novel.d_t())) {
      throw DimensionError("enhancer dims differ from the novel split");
    }
  }

  const auto total = static_cast<std::size_t>(cfg.episodes);
  std::vector<double> acc(total);
  const auto workers = static_cast<std::size_t>(std::clamp(jobs, 1, static_cast<int>(total)));
  if (workers == 1) {
    for (std::size_t e = 0; e < total; ++e) acc[e] = run_episode(sample_episode(novel, cfg, e), bank, enhancer, cfg);
    return acc;
  }

  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(workers);
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t e = next++; e < total; e = next++) {
            acc[e] = run_episode(sample_episode(novel, cfg, e), bank, enhancer, cfg);
          }
        } catch (...) {
          errors[w] = std::current_exception();
          next = total;
        }
      });
    }
  }
  for (const auto& err : errors) {
    if (err) std::rethrow_exception(err);
  }
  return acc;
}

EvalReport aggregate_report(const std::vector<double>& accuracies) {
  if (accuracies.size() < 2) throw InvalidArgument("aggregate_report needs at least 2 episodes");
  EvalReport r;
  r.accuracies = accuracies;
  r.mean = mean(accuracies);
  r.ci95_half_width = 1.96 * sample_stddev(accuracies) / std::sqrt(static_cast<double>(accuracies.size()));
  return r;
}

std::string to_string(ClassifierKind kind) {
  switch (kind) {
    case ClassifierKind::LR:
      return "LR";
    case ClassifierKind::EU:
      return "EU";
    case ClassifierKind::CO:
      return "CO";
  }
  return "?";
}

ClassifierKind classifier_from_string(const std::string& name) {
  if (name == "LR" || name == "lr") return ClassifierKind::LR;
  if (name == "EU" || name == "eu") return ClassifierKind::EU;
  if (name == "CO" || name == "co") return ClassifierKind::CO;
  throw InvalidArgument("unknown classifier '" + name + "' (expected LR, EU or CO)");
}

}  // namespace pmce
