#include "pmce/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include <nlohmann/json.hpp>

#include "pmce/error.hpp"

namespace pmce {

void adam_step(Vector& params, const Vector& grads, AdamState& state, const AdamConfig& cfg) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam_step: parameter, gradient and state sizes differ");
  }
  state.t += 1;
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grads;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const auto m_hat = state.m.array() / c1;
  const auto v_hat = state.v.array() / c2;
  params.array() -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
}

void TrainConfig::validate() const {
  if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (!(adam.lr >= 0.0)) throw InvalidArgument("learning rate must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw InvalidArgument("Adam betas must lie in [0, 1)");
  }
  if (!(adam.eps > 0.0)) throw InvalidArgument("Adam eps must be > 0");
  if (heads < 1) throw InvalidArgument("heads must be >= 1");
  if (d_k < 0) throw InvalidArgument("d_k must be >= 0");
  weights.validate();
}

EnhancerConfig TrainConfig::enhancer_config(int d_v, int d_t) const {
  auto cfg = EnhancerConfig::for_dims(d_v, d_t, heads);
  if (d_k > 0) cfg.d_k = d_k;
  cfg.validate();
  return cfg;
}

std::string to_json_line(const EpochLog& e) {
  nlohmann::json j = {{"epoch", e.epoch}, {"total", e.total}, {"cls", e.cls},
                      {"rec", e.rec},     {"con", e.con},     {"wall_seconds", e.wall_seconds}};
  return j.dump();
}

namespace {

struct BatchForward {
  std::vector<ForwardCache> caches;
  Matrix v_out;
  Matrix caption;  // B x d_v, token-mean of S_proj
  Matrix logits;
  Matrix targets;
};

BatchForward run_forward(const TrainBatch& batch, const KnowledgeBank& bank, const EnhancerModel& enhancer,
                         const ClassifierParams& classifier) {
  const auto b = batch.visual.rows();
  const auto& cfg = enhancer.config;
  if (batch.semantics.size() != static_cast<std::size_t>(b) || batch.labels.size() != static_cast<std::size_t>(b)) {
    throw DimensionError("training batch: visual, semantics and labels counts differ");
  }
  if (b == 0) throw InvalidArgument("training batch is empty");
  if (classifier.w_c.rows() != cfg.d_v || classifier.w_c.cols() != classifier.b_c.size()) {
    throw DimensionError("classifier shape does not match enhancer d_v");
  }
  if (static_cast<std::size_t>(bank.means.cols()) != static_cast<std::size_t>(cfg.d_v)) {
    throw DimensionError("knowledge bank d_v does not match enhancer");
  }

  BatchForward f;
  f.caches.reserve(static_cast<std::size_t>(b));
  f.v_out.resize(b, cfg.d_v);
  f.caption.resize(b, cfg.d_v);
  f.targets.resize(b, cfg.d_v);
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto label = batch.labels[static_cast<std::size_t>(i)];
    if (label >= bank.size()) throw InvalidArgument("training label " + std::to_string(label) + " has no bank mean");
    auto r = forward(batch.visual.row(i).transpose(), batch.semantics[static_cast<std::size_t>(i)], enhancer.params,
                     cfg);
    f.v_out.row(i) = r.v_out.transpose();
    f.caption.row(i) = r.cache.s_proj.colwise().mean();
    f.targets.row(i) = bank.means.row(label);
    f.caches.push_back(std::move(r.cache));
  }
  f.logits = f.v_out * classifier.w_c;
  f.logits.rowwise() += classifier.b_c.transpose();
  return f;
}

}  // namespace

LossComponents objective_value(const TrainBatch& batch, const KnowledgeBank& bank, const EnhancerModel& enhancer,
                               const ClassifierParams& classifier, const LossWeights& weights) {
  const auto f = run_forward(batch, bank, enhancer, classifier);
  LossComponents parts;
  parts.cls = cross_entropy(f.logits, batch.labels).loss;
  parts.rec = rec_loss(f.v_out, f.targets).loss;
  if (f.v_out.rows() >= 2) parts.con = supcon_loss(f.caption, batch.labels, weights.tau_c).loss;
  return parts;
}

ObjectiveGradients objective_gradients(const TrainBatch& batch, const KnowledgeBank& bank,
                                       const EnhancerModel& enhancer, const ClassifierParams& classifier,
                                       const LossWeights& weights) {
  const auto f = run_forward(batch, bank, enhancer, classifier);
  const auto b = f.v_out.rows();

  ObjectiveGradients out;
  const auto ce = cross_entropy(f.logits, batch.labels);
  const auto rec = rec_loss(f.v_out, f.targets);
  out.parts.cls = ce.loss;
  out.parts.rec = rec.loss;
  Matrix grad_caption = Matrix::Zero(b, enhancer.config.d_v);
  if (b >= 2) {
    auto con = supcon_loss(f.caption, batch.labels, weights.tau_c);
    out.parts.con = con.loss;
    grad_caption = weights.lambda_con * con.grad;
  }
  out.total = total_loss(out.parts, weights);

  out.classifier.w_c = f.v_out.transpose() * ce.grad;
  out.classifier.b_c = ce.grad.colwise().sum().transpose();
  const Matrix grad_v_out = ce.grad * classifier.w_c.transpose() + weights.lambda_rec * rec.grad;

  out.enhancer = EnhancerParams::zeros(enhancer.config);
  Vector acc = Vector::Zero(static_cast<Eigen::Index>(out.enhancer.num_scalars()));
  for (Eigen::Index i = 0; i < b; ++i) {
    const auto& cache = f.caches[static_cast<std::size_t>(i)];
    const auto tokens = cache.s_proj.rows();
    const Matrix grad_proj = grad_caption.row(i).replicate(tokens, 1) / static_cast<double>(tokens);
    const auto g = backward(cache, enhancer.params, grad_v_out.row(i).transpose(), &grad_proj);
    acc += g.params.flatten();
  }
  out.enhancer.assign_flat(acc);
  return out;
}

Vector flatten_trainable(const EnhancerParams& enhancer, const ClassifierParams& classifier) {
  const Vector e = enhancer.flatten();
  Vector flat(e.size() + classifier.w_c.size() + classifier.b_c.size());
  flat << e, classifier.w_c.reshaped<Eigen::RowMajor>(), classifier.b_c;
  return flat;
}

void assign_trainable(const Vector& flat, EnhancerParams& enhancer, ClassifierParams& classifier) {
  const auto ne = static_cast<Eigen::Index>(enhancer.num_scalars());
  const auto nw = classifier.w_c.size();
  const auto nb = classifier.b_c.size();
  if (flat.size() != ne + nw + nb) throw DimensionError("assign_trainable: size mismatch");
  enhancer.assign_flat(flat.head(ne));
  classifier.w_c.reshaped<Eigen::RowMajor>() = flat.segment(ne, nw);
  classifier.b_c = flat.tail(nb);
}

TrainResult train(const DatasetSplit& base, const KnowledgeBank& bank, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  base.validate();
  bank.validate();
  if (bank.size() != base.num_classes()) {
    throw DimensionError("train: bank has " + std::to_string(bank.size()) + " classes, base split has " +
                         std::to_string(base.num_classes()));
  }
  if (bank.d_v() != base.d_v()) throw DimensionError("train: bank d_v differs from base split");

  TrainResult result;
  result.enhancer.config = cfg.enhancer_config(static_cast<int>(base.d_v()), static_cast<int>(base.d_t()));
  result.enhancer.params = init_params(result.enhancer.config, cfg.seed);
  result.classifier = ClassifierParams::zeros(result.enhancer.config.d_v, static_cast<int>(bank.size()));

  Vector flat = flatten_trainable(result.enhancer.params, result.classifier);
  AdamState state(flat.size());
  std::mt19937_64 rng(cfg.seed);

  const auto n = base.records.size();
  const auto batch_size = static_cast<std::size_t>(cfg.batch_size);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    EpochLog log;
    log.epoch = epoch + 1;

    for (std::size_t begin = 0, batch_index = 0; begin < n; begin += batch_size, ++batch_index) {
      const auto end = std::min(n, begin + batch_size);
      TrainBatch batch;
      batch.visual.resize(static_cast<Eigen::Index>(end - begin), result.enhancer.config.d_v);
      for (std::size_t i = begin; i < end; ++i) {
        const auto& rec = base.records[order[i]];
        batch.visual.row(static_cast<Eigen::Index>(i - begin)) = rec.visual.cast<double>().transpose();
        batch.semantics.push_back(rec.caption_emb.cast<double>().transpose());
        batch.labels.push_back(rec.class_id);
      }

      const auto g = objective_gradients(batch, bank, result.enhancer, result.classifier, cfg.weights);
      const Vector grads = flatten_trainable(g.enhancer, g.classifier);
      if (!std::isfinite(g.total) || !grads.allFinite()) {
        throw NumericError("training diverged at epoch " + std::to_string(epoch + 1) + ", batch " +
                           std::to_string(batch_index) + " (loss " + std::to_string(g.total) + ")");
      }
      adam_step(flat, grads, state, cfg.adam);
      assign_trainable(flat, result.enhancer.params, result.classifier);

      const double share = static_cast<double>(end - begin) / static_cast<double>(n);
      log.total += share * g.total;
      log.cls += share * g.parts.cls;
      log.rec += share * g.parts.rec;
      log.con += share * g.parts.con;
    }
    log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
  }
  return result;
}

}  // namespace pmce
