#pragma once

// JSON mappings for configs and reports. from_json only overwrites keys that
// are present, so a partial object overlays the defaults.

#include <nlohmann/json.hpp>
#include <string>

#include "pmce/enhancer.hpp"
#include "pmce/episodic_eval.hpp"
#include "pmce/prior_retrieval.hpp"
#include "pmce/synthetic.hpp"
#include "pmce/trainer.hpp"

namespace pmce {

void to_json(nlohmann::json& j, const PriorConfig& c);
void from_json(const nlohmann::json& j, PriorConfig& c);

void to_json(nlohmann::json& j, const AblationFlags& f);
void from_json(const nlohmann::json& j, AblationFlags& f);

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

void to_json(nlohmann::json& j, const EnhancerConfig& c);

inline constexpr int kReportVersion = 1;

/// One evaluated variant: label, flags, classifier, mean, CI, accuracies and
/// the full config echo.
nlohmann::json report_entry(const EvalReport& report, const EvalConfig& cfg);

/// {"version": 1, "reports": [entries...]}
nlohmann::json report_document(const nlohmann::json& entries);

/// "85.03 +- 0.41" style percentage formatting of mean and CI half-width.
std::string format_mean_ci(double mean, double ci95_half_width);

std::string to_string(RetrievalCue cue);
RetrievalCue cue_from_string(const std::string& name);
std::string to_string(LrFitMode mode);
LrFitMode lr_mode_from_string(const std::string& name);

}  // namespace pmce
