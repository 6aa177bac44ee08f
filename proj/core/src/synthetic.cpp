#include "pmce/synthetic.hpp"

#include <cmath>
#include <random>
#include <string>

#include "pmce/error.hpp"
#include "pmce/knowledge_bank.hpp"

namespace pmce {

void SynthConfig::validate() const {
  if (n_base < 1 || n_novel < 1 || per_class < 1) throw InvalidArgument("synth: class and record counts must be >= 1");
  if (d_v < 1 || d_t < 1 || d_s < 1) throw InvalidArgument("synth: dimensions must be >= 1");
  if (d_s > d_v || d_s > d_t) throw InvalidArgument("synth: d_s must not exceed d_v or d_t");
  if (!(sigma_vis >= 0.0) || !(sigma_name >= 0.0) || !(sigma_cap >= 0.0)) {
    throw InvalidArgument("synth: noise scales must be >= 0");
  }
}

namespace {

class Gaussian {
 public:
  explicit Gaussian(std::uint64_t seed) : rng_(seed) {}

  double operator()() { return dist_(rng_); }

  Matrix matrix(int rows, int cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (*this)();
    return m;
  }

  Vector vector(int n) {
    Vector v(n);
    for (auto& x : v) x = (*this)();
    return v;
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> dist_;
};

Matrix orthonormal_columns(int rows, int cols, Gaussian& g) {
  const Eigen::MatrixXd draw = g.matrix(rows, cols);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(draw);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  return q;
}

struct Mixing {
  Matrix a;
  Matrix b;
  Matrix c;
};

DatasetSplit make_split(const std::string& name, int first_class, const Matrix& concepts, const Mixing& mix,
                        const SynthConfig& cfg, Gaussian& g, Matrix& true_means) {
  const auto classes = static_cast<int>(concepts.rows());
  DatasetSplit split;
  split.name = name;
  split.name_embs.resize(classes, cfg.d_t);
  true_means.resize(classes, cfg.d_v);

  std::vector<Vector> names(static_cast<std::size_t>(classes));
  for (int j = 0; j < classes; ++j) {
    split.class_names.push_back("class_" + std::to_string(first_class + j));
    const Vector concept_j = concepts.row(j).transpose();
    true_means.row(j) = (mix.a * concept_j).transpose();
    names[static_cast<std::size_t>(j)] = mix.b * concept_j + cfg.sigma_name * g.vector(cfg.d_t);
    split.name_embs.row(j) = names[static_cast<std::size_t>(j)].cast<float>().transpose();
  }
  for (int j = 0; j < classes; ++j) {
    const Vector mu = true_means.row(j).transpose();
    for (int r = 0; r < cfg.per_class; ++r) {
      const Vector offset = cfg.sigma_vis * g.vector(cfg.d_v);
      const Vector caption =
          names[static_cast<std::size_t>(j)] + mix.c * offset + cfg.sigma_cap * g.vector(cfg.d_t);
      FeatureRecord rec;
      rec.class_id = static_cast<std::uint32_t>(j);
      rec.visual = (mu + offset).cast<float>();
      rec.caption_emb = caption.cast<float>();
      split.records.push_back(std::move(rec));
    }
  }
  return split;
}

}  // namespace

SynthData generate(const SynthConfig& cfg) {
  cfg.validate();
  Gaussian g(cfg.seed);
  Mixing mix;
  mix.a = orthonormal_columns(cfg.d_v, cfg.d_s, g);
  mix.b = orthonormal_columns(cfg.d_t, cfg.d_s, g);
  mix.c = g.matrix(cfg.d_t, cfg.d_v) * (0.3 / std::sqrt(static_cast<double>(cfg.d_v)));

  const Matrix base_concepts = g.matrix(cfg.n_base, cfg.d_s);
  const Matrix novel_concepts = g.matrix(cfg.n_novel, cfg.d_s);

  SynthData data;
  data.base = make_split("base", 0, base_concepts, mix, cfg, g, data.base_true_means);
  data.novel = make_split("novel", cfg.n_base, novel_concepts, mix, cfg, g, data.novel_true_means);
  return data;
}

PriorDiagnostic prior_diagnostic(const SynthData& data, const PriorConfig& prior) {
  const auto bank = build_bank(data.base);
  const auto groups = data.novel.records_by_class();
  PriorDiagnostic d;
  std::size_t samples = 0;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    const Vector truth = data.novel_true_means.row(static_cast<Eigen::Index>(c)).transpose();
    const Vector name = data.novel.name_embs.row(static_cast<Eigen::Index>(c)).cast<double>().transpose();
    PriorConfig cfg = prior;
    cfg.alpha = 0.0;
    cfg.cue = RetrievalCue::class_name;
    // With alpha = 0 the calibrated prototype is the prior mean itself.
    const Matrix any_support = data.novel.records[groups[c].front()].visual.cast<double>().transpose();
    d.prior_distance += (calibrate_prototype(any_support, name, bank, cfg) - truth).norm();
    for (auto i : groups[c]) {
      d.sample_distance += (data.novel.records[i].visual.cast<double>() - truth).norm();
      ++samples;
    }
  }
  d.prior_distance /= static_cast<double>(groups.size());
  d.sample_distance /= static_cast<double>(samples);
  return d;
}

}  // namespace pmce
