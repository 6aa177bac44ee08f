#include "pmce/enhancer.hpp"

#include <cmath>
#include <random>

#include "pmce/error.hpp"

namespace pmce {

namespace {

void check_shape(const std::string& what, Eigen::Index rows, Eigen::Index cols, Eigen::Index want_rows,
                 Eigen::Index want_cols) {
  if (rows != want_rows || cols != want_cols) {
    throw DimensionError("enhancer " + what + " is " + std::to_string(rows) + "x" + std::to_string(cols) +
                         ", expected " + std::to_string(want_rows) + "x" + std::to_string(want_cols));
  }
}

Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-a, a);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace

EnhancerConfig EnhancerConfig::for_dims(int d_v, int d_t, int heads) {
  EnhancerConfig cfg;
  cfg.d_v = d_v;
  cfg.d_t = d_t;
  cfg.heads = heads;
  cfg.d_k = heads > 0 ? d_v / heads : 0;
  return cfg;
}

void EnhancerConfig::validate() const {
  if (d_v < 2) throw InvalidArgument("enhancer d_v must be >= 2");
  if (d_t < 1) throw InvalidArgument("enhancer d_t must be >= 1");
  if (heads < 1) throw InvalidArgument("enhancer needs at least one head");
  if (d_k < 1) throw InvalidArgument("enhancer d_k must be >= 1");
  if (!(ln_eps > 0.0)) throw InvalidArgument("enhancer ln_eps must be > 0");
}

EnhancerParams EnhancerParams::zeros(const EnhancerConfig& cfg) {
  cfg.validate();
  EnhancerParams p;
  p.w_p = Matrix::Zero(cfg.d_t, cfg.d_v);
  p.b_p = Vector::Zero(cfg.d_v);
  p.ln_gamma = Vector::Zero(cfg.d_v);
  p.ln_beta = Vector::Zero(cfg.d_v);
  for (int i = 0; i < cfg.heads; ++i) {
    p.w_q.push_back(Matrix::Zero(cfg.d_v, cfg.d_k));
    p.w_k.push_back(Matrix::Zero(cfg.d_v, cfg.d_k));
    p.w_v.push_back(Matrix::Zero(cfg.d_v, cfg.d_k));
  }
  p.w_o = Matrix::Zero(cfg.concat_width(), cfg.d_v);
  p.beta = 0.0;
  return p;
}

std::size_t EnhancerParams::num_scalars() const {
  std::size_t n = 0;
  for_each_tensor(*this, [&](const std::string&, const double*, Eigen::Index r, Eigen::Index c) {
    n += static_cast<std::size_t>(r * c);
  });
  return n;
}

Vector EnhancerParams::flatten() const {
  Vector flat(static_cast<Eigen::Index>(num_scalars()));
  Eigen::Index pos = 0;
  for_each_tensor(*this, [&](const std::string&, const double* data, Eigen::Index r, Eigen::Index c) {
    for (Eigen::Index i = 0; i < r * c; ++i) flat[pos++] = data[i];
  });
  return flat;
}

void EnhancerParams::assign_flat(const Vector& flat) {
  if (static_cast<std::size_t>(flat.size()) != num_scalars()) {
    throw DimensionError("assign_flat: expected " + std::to_string(num_scalars()) + " values, got " +
                         std::to_string(flat.size()));
  }
  Eigen::Index pos = 0;
  for_each_tensor(*this, [&](const std::string&, double* data, Eigen::Index r, Eigen::Index c) {
    for (Eigen::Index i = 0; i < r * c; ++i) data[i] = flat[pos++];
  });
}

void EnhancerParams::check_shapes(const EnhancerConfig& cfg) const {
  check_shape("w_p", w_p.rows(), w_p.cols(), cfg.d_t, cfg.d_v);
  check_shape("b_p", b_p.size(), 1, cfg.d_v, 1);
  check_shape("ln_gamma", ln_gamma.size(), 1, cfg.d_v, 1);
  check_shape("ln_beta", ln_beta.size(), 1, cfg.d_v, 1);
  const auto h = static_cast<std::size_t>(cfg.heads);
  if (w_q.size() != h || w_k.size() != h || w_v.size() != h) {
    throw DimensionError("enhancer head count differs from config");
  }
  for (std::size_t i = 0; i < h; ++i) {
    check_shape("w_q", w_q[i].rows(), w_q[i].cols(), cfg.d_v, cfg.d_k);
    check_shape("w_k", w_k[i].rows(), w_k[i].cols(), cfg.d_v, cfg.d_k);
    check_shape("w_v", w_v[i].rows(), w_v[i].cols(), cfg.d_v, cfg.d_k);
  }
  check_shape("w_o", w_o.rows(), w_o.cols(), cfg.concat_width(), cfg.d_v);
}

bool operator==(const EnhancerParams& a, const EnhancerParams& b) {
  if (a.num_scalars() != b.num_scalars() || a.w_q.size() != b.w_q.size()) return false;
  return a.w_p.rows() == b.w_p.rows() && a.w_o.rows() == b.w_o.rows() && a.flatten() == b.flatten();
}

EnhancerParams init_params(const EnhancerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  EnhancerParams p;
  p.w_p = uniform_matrix(cfg.d_t, cfg.d_v, rng);
  p.b_p = Vector::Zero(cfg.d_v);
  p.ln_gamma = Vector::Ones(cfg.d_v);
  p.ln_beta = Vector::Zero(cfg.d_v);
  for (int i = 0; i < cfg.heads; ++i) p.w_q.push_back(uniform_matrix(cfg.d_v, cfg.d_k, rng));
  for (int i = 0; i < cfg.heads; ++i) p.w_k.push_back(uniform_matrix(cfg.d_v, cfg.d_k, rng));
  for (int i = 0; i < cfg.heads; ++i) p.w_v.push_back(uniform_matrix(cfg.d_v, cfg.d_k, rng));
  p.w_o = uniform_matrix(cfg.concat_width(), cfg.d_v, rng);
  p.beta = 0.1;
  return p;
}

Vector layer_norm(const Vector& x, const Vector& gamma, const Vector& beta, double eps) {
  if (x.size() < 2) throw InvalidArgument("layer_norm needs at least 2 features");
  if (gamma.size() != x.size() || beta.size() != x.size()) throw DimensionError("layer_norm affine size mismatch");
  const double mean = x.mean();
  const Vector centered = x.array() - mean;
  const double var = centered.squaredNorm() / static_cast<double>(x.size());
  return (centered / std::sqrt(var + eps)).cwiseProduct(gamma) + beta;
}

namespace {

void check_inputs(const Vector& v_in, const Matrix& s_in, const EnhancerParams& params, const EnhancerConfig& cfg) {
  cfg.validate();
  params.check_shapes(cfg);
  if (v_in.size() != cfg.d_v) {
    throw DimensionError("enhancer input has " + std::to_string(v_in.size()) + " features, expected " +
                         std::to_string(cfg.d_v));
  }
  if (s_in.rows() < 1) throw InvalidArgument("enhancer needs at least one semantic token");
  if (s_in.cols() != cfg.d_t) {
    throw DimensionError("semantic tokens have width " + std::to_string(s_in.cols()) + ", expected " +
                         std::to_string(cfg.d_t));
  }
}

// Fills normed, inv_std, pre_relu and s_proj of `c` from c.s_in.
void project_into(ForwardCache& c, const EnhancerParams& p) {
  const auto tokens = c.s_in.rows();
  const auto d_v = p.b_p.size();
  Matrix pre_norm = c.s_in * p.w_p;
  pre_norm.rowwise() += p.b_p.transpose();
  c.normed.resize(tokens, d_v);
  c.inv_std.resize(tokens);
  for (Eigen::Index t = 0; t < tokens; ++t) {
    const double mean = pre_norm.row(t).mean();
    const auto centered = (pre_norm.row(t).array() - mean).matrix();
    const double var = centered.squaredNorm() / static_cast<double>(d_v);
    c.inv_std[t] = 1.0 / std::sqrt(var + c.config.ln_eps);
    c.normed.row(t) = centered * c.inv_std[t];
  }
  c.pre_relu = c.normed;
  c.pre_relu.array().rowwise() *= p.ln_gamma.transpose().array();
  c.pre_relu.rowwise() += p.ln_beta.transpose();
  c.s_proj = c.pre_relu.cwiseMax(0.0);
}

}  // namespace

Matrix project_semantics(const Matrix& s_in, const EnhancerParams& params, const EnhancerConfig& cfg) {
  cfg.validate();
  params.check_shapes(cfg);
  if (s_in.rows() < 1) throw InvalidArgument("project_semantics needs at least one token");
  if (s_in.cols() != cfg.d_t) throw DimensionError("project_semantics: token width differs from d_t");
  ForwardCache c;
  c.config = cfg;
  c.s_in = s_in;
  project_into(c, params);
  return std::move(c.s_proj);
}

ForwardResult forward(const Vector& v_in, const Matrix& s_in, const EnhancerParams& params,
                      const EnhancerConfig& cfg) {
  check_inputs(v_in, s_in, params, cfg);
  ForwardResult r;
  auto& c = r.cache;
  c.config = cfg;
  c.v_in = v_in;
  c.s_in = s_in;
  project_into(c, params);

  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_k));
  c.concat.resize(cfg.concat_width());
  c.heads.resize(static_cast<std::size_t>(cfg.heads));
  for (int i = 0; i < cfg.heads; ++i) {
    auto& h = c.heads[static_cast<std::size_t>(i)];
    h.query = params.w_q[static_cast<std::size_t>(i)].transpose() * v_in;
    h.keys = c.s_proj * params.w_k[static_cast<std::size_t>(i)];
    h.values = c.s_proj * params.w_v[static_cast<std::size_t>(i)];
    const Vector logits = (h.keys * h.query) * scale;
    h.attn = (logits.array() - logits.maxCoeff()).exp().matrix();
    h.attn /= h.attn.sum();
    c.concat.segment(i * cfg.d_k, cfg.d_k) = h.values.transpose() * h.attn;
  }
  c.delta = params.w_o.transpose() * c.concat;
  r.v_out = v_in + params.beta * c.delta;
  return r;
}

Vector enhance(const Vector& v_in, const Matrix& s_in, const EnhancerParams& params, const EnhancerConfig& cfg) {
  return forward(v_in, s_in, params, cfg).v_out;
}

EnhancerGradients backward(const ForwardCache& c, const EnhancerParams& params, const Vector& grad_v_out,
                           const Matrix* grad_s_proj) {
  const auto& cfg = c.config;
  params.check_shapes(cfg);
  const auto tokens = c.s_in.rows();
  if (grad_v_out.size() != cfg.d_v || c.v_in.size() != cfg.d_v || c.s_proj.rows() != tokens ||
      c.heads.size() != static_cast<std::size_t>(cfg.heads) || c.delta.size() != cfg.d_v) {
    throw DimensionError("backward: cache does not match the parameters or gradient");
  }
  if (grad_s_proj && (grad_s_proj->rows() != tokens || grad_s_proj->cols() != cfg.d_v)) {
    throw DimensionError("backward: grad_s_proj shape mismatch");
  }

  EnhancerGradients g{EnhancerParams::zeros(cfg), grad_v_out, Matrix()};
  auto& gp = g.params;

  gp.beta = grad_v_out.dot(c.delta);
  const Vector grad_delta = params.beta * grad_v_out;
  gp.w_o = c.concat * grad_delta.transpose();
  const Vector grad_concat = params.w_o * grad_delta;

  Matrix grad_proj = grad_s_proj ? *grad_s_proj : Matrix::Zero(tokens, cfg.d_v);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_k));
  for (int i = 0; i < cfg.heads; ++i) {
    const auto hi = static_cast<std::size_t>(i);
    const auto& h = c.heads[hi];
    const Vector grad_out = grad_concat.segment(i * cfg.d_k, cfg.d_k);
    const Matrix grad_values = h.attn * grad_out.transpose();
    const Vector grad_attn = h.values * grad_out;
    const Vector grad_logits = h.attn.cwiseProduct((grad_attn.array() - h.attn.dot(grad_attn)).matrix());
    const Matrix grad_keys = scale * grad_logits * h.query.transpose();
    const Vector grad_query = scale * h.keys.transpose() * grad_logits;

    gp.w_q[hi] = c.v_in * grad_query.transpose();
    g.v_in += params.w_q[hi] * grad_query;
    gp.w_k[hi] = c.s_proj.transpose() * grad_keys;
    gp.w_v[hi] = c.s_proj.transpose() * grad_values;
    grad_proj += grad_keys * params.w_k[hi].transpose() + grad_values * params.w_v[hi].transpose();
  }

  const Matrix grad_pre = grad_proj.cwiseProduct((c.pre_relu.array() > 0.0).cast<double>().matrix());
  gp.ln_gamma = grad_pre.cwiseProduct(c.normed).colwise().sum().transpose();
  gp.ln_beta = grad_pre.colwise().sum().transpose();
  Matrix grad_normed = grad_pre;
  grad_normed.array().rowwise() *= params.ln_gamma.transpose().array();

  Matrix grad_pre_norm(tokens, cfg.d_v);
  for (Eigen::Index t = 0; t < tokens; ++t) {
    const double mean_g = grad_normed.row(t).mean();
    const double mean_gn = grad_normed.row(t).dot(c.normed.row(t)) / static_cast<double>(cfg.d_v);
    grad_pre_norm.row(t) =
        c.inv_std[t] * ((grad_normed.row(t).array() - mean_g) - c.normed.row(t).array() * mean_gn).matrix();
  }
  gp.w_p = c.s_in.transpose() * grad_pre_norm;
  gp.b_p = grad_pre_norm.colwise().sum().transpose();
  g.s_in = grad_pre_norm * params.w_p.transpose();
  return g;
}

}  // namespace pmce
