#pragma once

// Caption-guided enhancer.
//
//   S_proj = ReLU(LN(S_in W_p + b_p))                 T x d_v
//   per head i:
//     q_i = v_in W_Q_i,  K_i = S_proj W_K_i,  V_i = S_proj W_V_i
//     a_i = softmax(K_i q_i / sqrt(d_k))               over the T tokens
//     o_i = a_i^T V_i                                  d_k
//   delta = [o_1 ... o_h] W_O                          d_v
//   v_out = v_in + beta * delta
//
// All math is double precision. backward() returns exact reverse-mode
// gradients for every parameter tensor and both inputs.

#include <cstdint>
#include <string>
#include <vector>

#include "pmce/types.hpp"

namespace pmce {

struct EnhancerConfig {
  int d_v = 0;
  int d_t = 0;
  int heads = 4;
  int d_k = 0;
  double ln_eps = 1e-5;

  /// heads evenly splitting d_v (d_k = d_v / heads).
  static EnhancerConfig for_dims(int d_v, int d_t, int heads = 4);

  int concat_width() const noexcept { return heads * d_k; }
  void validate() const;

  friend bool operator==(const EnhancerConfig&, const EnhancerConfig&) = default;
};

struct EnhancerParams {
  Matrix w_p;       // d_t x d_v
  Vector b_p;       // d_v
  Vector ln_gamma;  // d_v
  Vector ln_beta;   // d_v
  std::vector<Matrix> w_q;  // heads x (d_v x d_k)
  std::vector<Matrix> w_k;
  std::vector<Matrix> w_v;
  Matrix w_o;  // (heads * d_k) x d_v
  double beta = 0.1;

  /// Every tensor zero (including beta and ln_gamma); the shape of a gradient.
  static EnhancerParams zeros(const EnhancerConfig& cfg);

  std::size_t num_scalars() const;
  Vector flatten() const;
  void assign_flat(const Vector& flat);

  /// Throws DimensionError unless every tensor has the shape `cfg` implies.
  void check_shapes(const EnhancerConfig& cfg) const;

  friend bool operator==(const EnhancerParams& a, const EnhancerParams& b);
};

/// Name, element pointer and shape of each tensor, in flatten()/checkpoint
/// order: w_p, b_p, ln_gamma, ln_beta, w_q[0..h), w_k[0..h), w_v[0..h), w_o, beta.
template <typename Params, typename Fn>
void for_each_tensor(Params& p, Fn&& fn) {
  fn(std::string("w_p"), p.w_p.data(), p.w_p.rows(), p.w_p.cols());
  fn(std::string("b_p"), p.b_p.data(), p.b_p.size(), Eigen::Index{1});
  fn(std::string("ln_gamma"), p.ln_gamma.data(), p.ln_gamma.size(), Eigen::Index{1});
  fn(std::string("ln_beta"), p.ln_beta.data(), p.ln_beta.size(), Eigen::Index{1});
  for (std::size_t i = 0; i < p.w_q.size(); ++i) {
    fn("w_q." + std::to_string(i), p.w_q[i].data(), p.w_q[i].rows(), p.w_q[i].cols());
  }
  for (std::size_t i = 0; i < p.w_k.size(); ++i) {
    fn("w_k." + std::to_string(i), p.w_k[i].data(), p.w_k[i].rows(), p.w_k[i].cols());
  }
  for (std::size_t i = 0; i < p.w_v.size(); ++i) {
    fn("w_v." + std::to_string(i), p.w_v[i].data(), p.w_v[i].rows(), p.w_v[i].cols());
  }
  fn(std::string("w_o"), p.w_o.data(), p.w_o.rows(), p.w_o.cols());
  fn(std::string("beta"), &p.beta, Eigen::Index{1}, Eigen::Index{1});
}

/// Parameters plus the config that shapes them.
struct EnhancerModel {
  EnhancerConfig config;
  EnhancerParams params;
};

/// beta = 0.1, LN affine = identity, weight matrices uniform in +-sqrt(6 / (fan_in + fan_out)),
/// b_p = 0. Deterministic in `seed`.
EnhancerParams init_params(const EnhancerConfig& cfg, std::uint64_t seed);

/// (x - mean) / sqrt(var + eps) * gamma + beta, population variance.
Vector layer_norm(const Vector& x, const Vector& gamma, const Vector& beta, double eps);

/// Row-wise ReLU(LN(S_in W_p + b_p)).
Matrix project_semantics(const Matrix& s_in, const EnhancerParams& params, const EnhancerConfig& cfg);

struct HeadCache {
  Vector query;   // d_k
  Matrix keys;    // T x d_k
  Matrix values;  // T x d_k
  Vector attn;    // T
};

struct ForwardCache {
  EnhancerConfig config;
  Vector v_in;
  Matrix s_in;      // T x d_t
  Matrix normed;    // T x d_v, LN output before the affine
  Vector inv_std;   // T
  Matrix pre_relu;  // T x d_v
  Matrix s_proj;    // T x d_v
  std::vector<HeadCache> heads;
  Vector concat;  // heads * d_k
  Vector delta;   // d_v
};

struct ForwardResult {
  Vector v_out;
  ForwardCache cache;
};

ForwardResult forward(const Vector& v_in, const Matrix& s_in, const EnhancerParams& params,
                      const EnhancerConfig& cfg);

/// Output only; same arithmetic as forward().
Vector enhance(const Vector& v_in, const Matrix& s_in, const EnhancerParams& params, const EnhancerConfig& cfg);

struct EnhancerGradients {
  EnhancerParams params;
  Vector v_in;
  Matrix s_in;
};

/// Reverse pass for one forward. `grad_s_proj`, when non-null, is an extra
/// upstream gradient on the projected semantics (T x d_v), used by losses that
/// read S_proj directly.
EnhancerGradients backward(const ForwardCache& cache, const EnhancerParams& params, const Vector& grad_v_out,
                           const Matrix* grad_s_proj = nullptr);

}  // namespace pmce
