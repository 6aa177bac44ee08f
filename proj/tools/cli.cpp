#include "cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>

#include "pmce/checkpoint.hpp"
#include "pmce/episodic_eval.hpp"
#include "pmce/error.hpp"
#include "pmce/feature_store.hpp"
#include "pmce/gradcheck.hpp"
#include "pmce/knowledge_bank.hpp"
#include "pmce/serialization.hpp"
#include "pmce/stats.hpp"
#include "pmce/synthetic.hpp"
#include "pmce/trainer.hpp"

namespace pmce::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string line(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), fmt, args...);
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("failed writing " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

/// The run config named by --config, found before CLI11 parses so that flags
/// given on the command line override file values.
json prescan_config(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return read_json(args[i + 1]);
    if (args[i].rfind("--config=", 0) == 0) return read_json(args[i].substr(9));
  }
  return json::object();
}

std::string section_string(const json& cfg, const char* key, const std::string& fallback = {}) {
  if (auto it = cfg.find("paths"); it != cfg.end()) {
    if (auto p = it->find(key); p != it->end()) return p->get<std::string>();
  }
  return fallback;
}

struct SynthArgs {
  SynthConfig cfg;
  std::string out;
  bool diagnostic = false;
};

struct BankArgs {
  std::string store;
  std::string out;
};

struct TrainArgs {
  TrainConfig cfg;
  std::string store;
  std::string bank;
  std::string out;
  std::string log;
};

struct EvalArgs {
  EvalConfig cfg;
  std::string store;
  std::string bank;
  std::string checkpoint;
  std::string split = "novel";
  std::string out;
  std::string csv;
  int jobs = 1;
  bool all_variants = false;
  double alpha = std::numeric_limits<double>::quiet_NaN();
  double sigma_prior_sq = 0.0;
  double sigma_like_sq = 0.0;
  std::string classifier;
  std::string cue;
  std::string lr_mode;
};

struct GradcheckArgs {
  GradcheckConfig cfg;
  int seeds = 1;
};

struct ReportArgs {
  std::vector<std::string> files;
  std::string baseline;
};

// --- synth -----------------------------------------------------------------

int cmd_synth(const SynthArgs& a, std::ostream& out) {
  const auto data = generate(a.cfg);
  const DatasetSplit splits[] = {data.base, data.novel};
  const auto manifest = write_store(splits, a.out);
  out << "wrote store " << a.out << " (d_v=" << manifest.d_v << ", d_t=" << manifest.d_t << ")\n";
  for (const auto& [name, s] : manifest.splits) {
    out << line("  %-10s %4zu classes %7zu records  records_fnv1a=%s\n", name.c_str(), s.num_classes, s.num_records,
                s.records_fnv1a.c_str());
  }
  if (a.diagnostic) {
    const auto d = prior_diagnostic(data, PriorConfig{});
    out << line("  prior-mean distance %.4f, single-sample distance %.4f\n", d.prior_distance, d.sample_distance);
  }
  return kExitOk;
}

// --- bank ------------------------------------------------------------------

int cmd_bank(const BankArgs& a, std::ostream& out) {
  const auto store = read_store(a.store);
  const auto bank = build_bank(store.split("base"));
  const auto dir = a.out.empty() ? a.store : a.out;
  save_bank(bank, dir);
  out << "wrote knowledge bank " << dir << " (" << bank.size() << " classes, d_v=" << bank.d_v()
      << ", d_t=" << bank.d_t() << ")\n";
  return kExitOk;
}

// --- train -----------------------------------------------------------------

int cmd_train(const TrainArgs& a, std::ostream& out) {
  const auto store = read_store(a.store);
  const auto bank = load_bank(a.bank.empty() ? a.store : a.bank);
  const auto log_path = a.log.empty() ? a.out + ".log.jsonl" : a.log;
  std::ostringstream log;
  const auto result = train(store.split("base"), bank, a.cfg, [&](const EpochLog& e) {
    log << to_json_line(e) << '\n';
    out << line("epoch %3d  total %.6f  cls %.6f  rec %.6f  con %.6f\n", e.epoch, e.total, e.cls, e.rec, e.con);
  });
  Checkpoint ckpt{result.enhancer, a.cfg.seed, result.classifier};
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  save_checkpoint(ckpt, a.out);
  write_text(log_path, log.str());
  out << "wrote checkpoint " << a.out << " (beta=" << result.enhancer.params.beta << ") and log " << log_path << "\n";
  return kExitOk;
}

// --- eval ------------------------------------------------------------------

int cmd_eval(EvalArgs a, std::ostream& out) {
  if (!std::isnan(a.alpha)) a.cfg.prior.alpha = a.alpha;
  if (a.sigma_prior_sq > 0.0 || a.sigma_like_sq > 0.0) {
    a.cfg.prior.alpha = AlphaFromVariances{a.sigma_prior_sq, a.sigma_like_sq};
  }
  if (!a.classifier.empty()) a.cfg.classifier = classifier_from_string(a.classifier);
  if (!a.cue.empty()) a.cfg.prior.cue = cue_from_string(a.cue);
  if (!a.lr_mode.empty()) a.cfg.lr_mode = lr_mode_from_string(a.lr_mode);

  const auto store = read_store(a.store);
  const auto bank = load_bank(a.bank.empty() ? a.store : a.bank);
  const auto& split = store.split(a.split);

  std::vector<AblationFlags> variants = a.all_variants ? AblationFlags::lattice() : std::vector{a.cfg.flags};
  bool need_enhancer = false;
  for (const auto& v : variants) need_enhancer = need_enhancer || v.needs_enhancer();
  std::optional<EnhancerModel> enhancer;
  if (need_enhancer) {
    if (a.checkpoint.empty()) {
      throw InvalidArgument("enhancement is enabled but no --checkpoint was given (or pass --enhance-support=false "
                            "--enhance-query=false)");
    }
    enhancer = load_checkpoint(a.checkpoint).enhancer;
  }

  json entries = json::array();
  std::ostringstream csv;
  csv << "variant,classifier,episode,accuracy\n";
  out << line("%-22s %-4s %5s %6s %9s  %s\n", "variant", "clf", "way", "shot", "episodes", "accuracy (%)");
  for (const auto& flags : variants) {
    EvalConfig cfg = a.cfg;
    cfg.flags = flags;
    const auto acc = evaluate_episodes(split, bank, enhancer ? &*enhancer : nullptr, cfg, a.jobs);
    const auto report = aggregate_report(acc);
    entries.push_back(report_entry(report, cfg));
    for (std::size_t e = 0; e < acc.size(); ++e) {
      csv << flags.label() << ',' << to_string(cfg.classifier) << ',' << e << ',' << json(acc[e]).dump() << '\n';
    }
    out << line("%-22s %-4s %5d %6d %9zu  %s\n", flags.label().c_str(), to_string(cfg.classifier).c_str(), cfg.n_way,
                cfg.k_shot, acc.size(), format_mean_ci(report.mean, report.ci95_half_width).c_str());
  }
  if (!a.out.empty()) write_text(a.out, report_document(entries).dump(2) + "\n");
  if (!a.csv.empty()) write_text(a.csv, csv.str());
  return kExitOk;
}

// --- gradcheck -------------------------------------------------------------

int cmd_gradcheck(const GradcheckArgs& a, std::ostream& out) {
  std::map<std::string, TensorCheck> worst;
  std::vector<std::string> order;
  for (int s = 0; s < a.seeds; ++s) {
    auto cfg = a.cfg;
    cfg.seed = a.cfg.seed + static_cast<std::uint64_t>(s);
    for (const auto& c : run_gradcheck(cfg)) {
      auto [it, inserted] = worst.try_emplace(c.name, c);
      if (inserted) {
        order.push_back(c.name);
        continue;
      }
      it->second.max_abs_error = std::max(it->second.max_abs_error, c.max_abs_error);
      it->second.max_rel_error = std::max(it->second.max_rel_error, c.max_rel_error);
      it->second.passed = it->second.passed && c.passed;
    }
  }
  bool all = true;
  out << line("%-16s %6s %14s %14s  %s\n", "tensor", "size", "max abs err", "max rel err", "result");
  for (const auto& name : order) {
    const auto& c = worst.at(name);
    all = all && c.passed;
    out << line("%-16s %6zu %14.3e %14.3e  %s\n", name.c_str(), c.size, c.max_abs_error, c.max_rel_error,
                c.passed ? "PASS" : "FAIL");
  }
  out << (all ? "all tensors pass" : "gradient check FAILED") << " (tolerance " << a.cfg.tolerance << ", "
      << a.seeds << " seed(s))\n";
  return all ? kExitOk : kExitRuntime;
}

// --- report ----------------------------------------------------------------

int cmd_report(const ReportArgs& a, std::ostream& out) {
  struct Row {
    std::string file;
    json entry;
  };
  std::vector<Row> rows;
  for (const auto& f : a.files) {
    const auto doc = read_json(f);
    if (doc.value("version", 0) != kReportVersion) throw FormatError(f + ": unknown report version");
    for (const auto& e : doc.at("reports")) rows.push_back({f, e});
  }
  out << line("%-22s %-4s %5s %6s %9s  %-16s %s\n", "variant", "clf", "way", "shot", "episodes", "accuracy (%)",
              a.baseline.empty() ? "" : "vs baseline");
  const json* base = nullptr;
  for (const auto& r : rows) {
    if (r.entry.at("variant").get<std::string>() == a.baseline) base = &r.entry;
  }
  if (!a.baseline.empty() && base == nullptr) throw InvalidArgument("no report has variant '" + a.baseline + "'");

  for (const auto& r : rows) {
    const auto& e = r.entry;
    std::string cmp;
    if (base != nullptr && &e != base) {
      const auto x = e.at("accuracies").get<std::vector<double>>();
      const auto y = base->at("accuracies").get<std::vector<double>>();
      if (x.size() == y.size() && x.size() >= 2) {
        const auto t = paired_t_test(x, y);
        cmp = line("%+.2f (t=%.2f, p=%.2g)", 100.0 * t.mean_diff, t.t, t.p_two_sided);
      }
    }
    out << line("%-22s %-4s %5d %6d %9zu  %-16s %s\n", e.at("variant").get<std::string>().c_str(),
                e.at("classifier").get<std::string>().c_str(), e.at("n_way").get<int>(), e.at("k_shot").get<int>(),
                e.at("episodes").get<std::size_t>(),
                format_mean_ci(e.at("mean").get<double>(), e.at("ci95_half_width").get<double>()).c_str(),
                cmp.c_str());
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Few-shot prototype calibration and caption-guided enhancement on precomputed embeddings", "pmce"};
  app.require_subcommand(1);
  std::string config_path;

  json file_cfg;
  try {
    file_cfg = prescan_config(args);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  auto add_config = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run config (sections synth/train/eval/paths)")
        ->check(CLI::ExistingFile);
  };

  // synth
  SynthArgs synth;
  if (file_cfg.contains("synth")) from_json(file_cfg["synth"], synth.cfg);
  synth.out = section_string(file_cfg, "store");
  auto* s = app.add_subcommand("synth", "Generate a synthetic correlated-embedding store");
  add_config(s);
  s->add_option("--out", synth.out, "Output store directory")->required(synth.out.empty());
  s->add_option("--n-base", synth.cfg.n_base, "Base classes")->capture_default_str();
  s->add_option("--n-novel", synth.cfg.n_novel, "Novel classes")->capture_default_str();
  s->add_option("--per-class", synth.cfg.per_class, "Records per class")->capture_default_str();
  s->add_option("--d-v", synth.cfg.d_v, "Visual dimension")->capture_default_str();
  s->add_option("--d-t", synth.cfg.d_t, "Text dimension")->capture_default_str();
  s->add_option("--d-s", synth.cfg.d_s, "Latent concept dimension")->capture_default_str();
  s->add_option("--sigma-vis", synth.cfg.sigma_vis, "Visual noise")->capture_default_str();
  s->add_option("--sigma-name", synth.cfg.sigma_name, "Class-name embedding noise")->capture_default_str();
  s->add_option("--sigma-cap", synth.cfg.sigma_cap, "Caption embedding noise")->capture_default_str();
  s->add_option("--seed", synth.cfg.seed, "PRNG seed")->capture_default_str();
  s->add_flag("--diagnostic", synth.diagnostic, "Print prior-vs-sample distance diagnostic");

  // bank
  BankArgs bank;
  bank.store = section_string(file_cfg, "store");
  bank.out = section_string(file_cfg, "bank");
  auto* b = app.add_subcommand("bank", "Build the knowledge bank from the base split");
  add_config(b);
  b->add_option("--store", bank.store, "Store directory")->required(bank.store.empty())->check(CLI::ExistingDirectory);
  b->add_option("--out", bank.out, "Bank output directory (default: the store directory)");

  // train
  TrainArgs tr;
  if (file_cfg.contains("train")) from_json(file_cfg["train"], tr.cfg);
  tr.store = section_string(file_cfg, "store");
  tr.bank = section_string(file_cfg, "bank");
  tr.out = section_string(file_cfg, "checkpoint");
  auto* t = app.add_subcommand("train", "Train the enhancer and auxiliary classifier on base classes");
  add_config(t);
  t->add_option("--store", tr.store, "Store directory")->required(tr.store.empty())->check(CLI::ExistingDirectory);
  t->add_option("--bank", tr.bank, "Bank directory (default: the store directory)")->check(CLI::ExistingDirectory);
  t->add_option("--out", tr.out, "Checkpoint output file")->required(tr.out.empty());
  t->add_option("--log", tr.log, "Per-epoch JSON-lines log (default: <out>.log.jsonl)");
  t->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
  t->add_option("--batch-size", tr.cfg.batch_size)->capture_default_str();
  t->add_option("--lr", tr.cfg.adam.lr)->capture_default_str();
  t->add_option("--adam-beta1", tr.cfg.adam.beta1)->capture_default_str();
  t->add_option("--adam-beta2", tr.cfg.adam.beta2)->capture_default_str();
  t->add_option("--adam-eps", tr.cfg.adam.eps)->capture_default_str();
  t->add_option("--seed", tr.cfg.seed)->capture_default_str();
  t->add_option("--lambda-rec", tr.cfg.weights.lambda_rec)->capture_default_str();
  t->add_option("--lambda-con", tr.cfg.weights.lambda_con)->capture_default_str();
  t->add_option("--tau-c", tr.cfg.weights.tau_c)->capture_default_str();
  t->add_option("--heads", tr.cfg.heads)->capture_default_str();
  t->add_option("--d-k", tr.cfg.d_k, "Per-head key width (0: d_v / heads)")->capture_default_str();

  // eval
  EvalArgs ev;
  if (file_cfg.contains("eval")) from_json(file_cfg["eval"], ev.cfg);
  ev.store = section_string(file_cfg, "store");
  ev.bank = section_string(file_cfg, "bank");
  ev.checkpoint = section_string(file_cfg, "checkpoint");
  auto* e = app.add_subcommand("eval", "Evaluate N-way K-shot episodes on a split");
  add_config(e);
  e->add_option("--store", ev.store, "Store directory")->required(ev.store.empty())->check(CLI::ExistingDirectory);
  e->add_option("--bank", ev.bank, "Bank directory (default: the store directory)")->check(CLI::ExistingDirectory);
  e->add_option("--checkpoint", ev.checkpoint, "Trained enhancer checkpoint")->check(CLI::ExistingFile);
  e->add_option("--split", ev.split, "Split to sample episodes from")->capture_default_str();
  e->add_option("--out", ev.out, "Report JSON output");
  e->add_option("--csv", ev.csv, "Per-episode accuracy CSV output");
  e->add_option("--jobs", ev.jobs, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  e->add_flag("--all-variants", ev.all_variants, "Evaluate all eight ablation flag combinations");
  e->add_option("--n-way", ev.cfg.n_way)->capture_default_str();
  e->add_option("--k-shot", ev.cfg.k_shot)->capture_default_str();
  e->add_option("--m-query", ev.cfg.m_query)->capture_default_str();
  e->add_option("--episodes", ev.cfg.episodes)->capture_default_str();
  e->add_option("--seed", ev.cfg.seed)->capture_default_str();
  e->add_option("--k", ev.cfg.prior.k, "Retrieved base classes")->capture_default_str();
  e->add_option("--tau", ev.cfg.prior.tau, "Prior weighting temperature")->capture_default_str();
  e->add_option("--alpha", ev.alpha, "Support weight in [0, 1] (default 0.33 for 1-shot, 0.7 otherwise)");
  e->add_option("--sigma-prior-sq", ev.sigma_prior_sq, "Derive alpha from prior variance (with --sigma-like-sq)");
  e->add_option("--sigma-like-sq", ev.sigma_like_sq, "Derive alpha from likelihood variance");
  e->add_option("--cue", ev.cue, "Retrieval cue")->check(CLI::IsMember({"class_name", "visual_mean"}));
  e->add_option("--classifier", ev.classifier, "LR, EU or CO")->check(CLI::IsMember({"LR", "EU", "CO", "lr", "eu", "co"}));
  e->add_option("--lr-l2", ev.cfg.lr_l2)->capture_default_str();
  e->add_option("--lr-mode", ev.lr_mode, "prototypes or supports")->check(CLI::IsMember({"prototypes", "supports"}));
  e->add_option("--use-map", ev.cfg.flags.use_map)->capture_default_str();
  e->add_option("--enhance-support", ev.cfg.flags.enhance_support)->capture_default_str();
  e->add_option("--enhance-query", ev.cfg.flags.enhance_query)->capture_default_str();

  // gradcheck
  GradcheckArgs gc;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of the training gradients");
  add_config(g);
  g->add_option("--d-v", gc.cfg.d_v)->capture_default_str();
  g->add_option("--d-t", gc.cfg.d_t)->capture_default_str();
  g->add_option("--heads", gc.cfg.heads)->capture_default_str();
  g->add_option("--d-k", gc.cfg.d_k)->capture_default_str();
  g->add_option("--tokens", gc.cfg.tokens)->capture_default_str();
  g->add_option("--batch", gc.cfg.batch)->capture_default_str();
  g->add_option("--num-classes", gc.cfg.num_classes)->capture_default_str();
  g->add_option("--seed", gc.cfg.seed)->capture_default_str();
  g->add_option("--seeds", gc.seeds, "Number of consecutive seeds")->capture_default_str()->check(CLI::PositiveNumber);
  g->add_option("--step", gc.cfg.step)->capture_default_str();
  g->add_option("--tolerance", gc.cfg.tolerance)->capture_default_str();
  g->add_flag("--inject-bug", gc.cfg.inject_bug, "Corrupt one analytic gradient (negative control)");

  // report
  ReportArgs rep;
  auto* r = app.add_subcommand("report", "Print eval report JSON files as a table");
  r->add_option("reports", rep.files, "Report JSON files")->required()->check(CLI::ExistingFile);
  r->add_option("--baseline", rep.baseline, "Variant to compare every other row against (paired t-test)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& ex) {
    err << "error: " << ex.what() << "\n";
    if (!app.get_subcommands().empty()) err << "run with --help for usage\n";
    return kExitUsage;
  }

  try {
    if (s->parsed()) return cmd_synth(synth, out);
    if (b->parsed()) return cmd_bank(bank, out);
    if (t->parsed()) return cmd_train(tr, out);
    if (e->parsed()) return cmd_eval(ev, out);
    if (g->parsed()) return cmd_gradcheck(gc, out);
    if (r->parsed()) return cmd_report(rep, out);
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}

}  // namespace pmce::cli
