#include "pmce/serialization.hpp"

#include <cstdio>

#include "pmce/error.hpp"

namespace pmce {

using nlohmann::json;

namespace {

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

}  // namespace

std::string to_string(RetrievalCue cue) { return cue == RetrievalCue::class_name ? "class_name" : "visual_mean"; }

RetrievalCue cue_from_string(const std::string& name) {
  if (name == "class_name") return RetrievalCue::class_name;
  if (name == "visual_mean") return RetrievalCue::visual_mean;
  throw InvalidArgument("unknown retrieval cue '" + name + "' (expected class_name or visual_mean)");
}

std::string to_string(LrFitMode mode) { return mode == LrFitMode::prototypes ? "prototypes" : "supports"; }

LrFitMode lr_mode_from_string(const std::string& name) {
  if (name == "prototypes") return LrFitMode::prototypes;
  if (name == "supports") return LrFitMode::supports;
  throw InvalidArgument("unknown LR mode '" + name + "' (expected prototypes or supports)");
}

void to_json(json& j, const PriorConfig& c) {
  j = {{"k", c.k}, {"tau", c.tau}, {"cue", to_string(c.cue)}};
  if (!c.alpha) {
    j["alpha"] = nullptr;
  } else if (const auto* fixed = std::get_if<double>(&*c.alpha)) {
    j["alpha"] = *fixed;
  } else {
    const auto& v = std::get<AlphaFromVariances>(*c.alpha);
    j["alpha"] = {{"sigma_prior_sq", v.sigma_prior_sq}, {"sigma_like_sq", v.sigma_like_sq}};
  }
}

void from_json(const json& j, PriorConfig& c) {
  read_if(j, "k", c.k);
  read_if(j, "tau", c.tau);
  if (auto it = j.find("cue"); it != j.end()) c.cue = cue_from_string(it->get<std::string>());
  if (auto it = j.find("alpha"); it != j.end()) {
    if (it->is_null()) {
      c.alpha.reset();
    } else if (it->is_number()) {
      c.alpha = it->get<double>();
    } else {
      c.alpha = AlphaFromVariances{it->at("sigma_prior_sq").get<double>(), it->at("sigma_like_sq").get<double>()};
    }
  }
}

void to_json(json& j, const AblationFlags& f) {
  j = {{"use_map", f.use_map}, {"enhance_support", f.enhance_support}, {"enhance_query", f.enhance_query}};
}

void from_json(const json& j, AblationFlags& f) {
  read_if(j, "use_map", f.use_map);
  read_if(j, "enhance_support", f.enhance_support);
  read_if(j, "enhance_query", f.enhance_query);
}

void to_json(json& j, const EvalConfig& c) {
  j = {{"n_way", c.n_way},
       {"k_shot", c.k_shot},
       {"m_query", c.m_query},
       {"episodes", c.episodes},
       {"seed", c.seed},
       {"prior", c.prior},
       {"classifier", to_string(c.classifier)},
       {"flags", c.flags},
       {"lr_l2", c.lr_l2},
       {"lr_mode", to_string(c.lr_mode)}};
}

void from_json(const json& j, EvalConfig& c) {
  read_if(j, "n_way", c.n_way);
  read_if(j, "k_shot", c.k_shot);
  read_if(j, "m_query", c.m_query);
  read_if(j, "episodes", c.episodes);
  read_if(j, "seed", c.seed);
  if (auto it = j.find("prior"); it != j.end()) from_json(*it, c.prior);
  if (auto it = j.find("classifier"); it != j.end()) c.classifier = classifier_from_string(it->get<std::string>());
  if (auto it = j.find("flags"); it != j.end()) from_json(*it, c.flags);
  read_if(j, "lr_l2", c.lr_l2);
  if (auto it = j.find("lr_mode"); it != j.end()) c.lr_mode = lr_mode_from_string(it->get<std::string>());
}

void to_json(json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"lr", c.adam.lr},
       {"adam_beta1", c.adam.beta1},
       {"adam_beta2", c.adam.beta2},
       {"adam_eps", c.adam.eps},
       {"seed", c.seed},
       {"lambda_rec", c.weights.lambda_rec},
       {"lambda_con", c.weights.lambda_con},
       {"tau_c", c.weights.tau_c},
       {"heads", c.heads},
       {"d_k", c.d_k}};
}

void from_json(const json& j, TrainConfig& c) {
  read_if(j, "epochs", c.epochs);
  read_if(j, "batch_size", c.batch_size);
  read_if(j, "lr", c.adam.lr);
  read_if(j, "adam_beta1", c.adam.beta1);
  read_if(j, "adam_beta2", c.adam.beta2);
  read_if(j, "adam_eps", c.adam.eps);
  read_if(j, "seed", c.seed);
  read_if(j, "lambda_rec", c.weights.lambda_rec);
  read_if(j, "lambda_con", c.weights.lambda_con);
  read_if(j, "tau_c", c.weights.tau_c);
  read_if(j, "heads", c.heads);
  read_if(j, "d_k", c.d_k);
}

void to_json(json& j, const SynthConfig& c) {
  j = {{"n_base", c.n_base},         {"n_novel", c.n_novel},     {"per_class", c.per_class},
       {"d_v", c.d_v},               {"d_t", c.d_t},             {"d_s", c.d_s},
       {"sigma_vis", c.sigma_vis},   {"sigma_name", c.sigma_name}, {"sigma_cap", c.sigma_cap},
       {"seed", c.seed}};
}

void from_json(const json& j, SynthConfig& c) {
  read_if(j, "n_base", c.n_base);
  read_if(j, "n_novel", c.n_novel);
  read_if(j, "per_class", c.per_class);
  read_if(j, "d_v", c.d_v);
  read_if(j, "d_t", c.d_t);
  read_if(j, "d_s", c.d_s);
  read_if(j, "sigma_vis", c.sigma_vis);
  read_if(j, "sigma_name", c.sigma_name);
  read_if(j, "sigma_cap", c.sigma_cap);
  read_if(j, "seed", c.seed);
}

void to_json(json& j, const EnhancerConfig& c) {
  j = {{"d_v", c.d_v}, {"d_t", c.d_t}, {"heads", c.heads}, {"d_k", c.d_k}, {"ln_eps", c.ln_eps}};
}

json report_entry(const EvalReport& report, const EvalConfig& cfg) {
  return {{"variant", cfg.flags.label()},
          {"classifier", to_string(cfg.classifier)},
          {"n_way", cfg.n_way},
          {"k_shot", cfg.k_shot},
          {"episodes", report.accuracies.size()},
          {"mean", report.mean},
          {"ci95_half_width", report.ci95_half_width},
          {"accuracies", report.accuracies},
          {"config", cfg}};
}

json report_document(const json& entries) { return {{"version", kReportVersion}, {"reports", entries}}; }

std::string format_mean_ci(double mean, double ci95_half_width) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f +- %.2f", 100.0 * mean, 100.0 * ci95_half_width);
  return buf;
}

}  // namespace pmce
