#include "raudit/commands.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "raudit/error.hpp"
#include "raudit/rng.hpp"

namespace raudit {
namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw InputError("write failed for '" + path.string() + "'");
}

void write_json(const fs::path& path, const nlohmann::json& doc) { write_text(path, doc.dump(2) + "\n"); }

fs::path output_dir(const AuditConfig& c) { return c.output_dir ? resolve(c, *c.output_dir) : fs::path("."); }

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
  return out;
}

std::string provenance_text(const AuditConfig& c, const char* key) {
  if (!c.provenance.is_object() || !c.provenance.contains(key)) return {};
  const auto& v = c.provenance[key];
  return v.is_string() ? v.get<std::string>() : v.dump();
}

nlohmann::json mapping_to_json(const ColumnMapping& m) {
  nlohmann::json j = {{"id", m.id}, {"features", m.features}};
  if (m.block) j["block"] = *m.block;
  if (m.cluster) j["cluster"] = *m.cluster;
  if (m.lat) j["lat"] = *m.lat;
  if (m.lon) j["lon"] = *m.lon;
  if (m.treated) j["treated"] = *m.treated;
  if (m.selected) j["selected"] = *m.selected;
  if (!m.responses.empty()) j["responses"] = m.responses;
  return j;
}

std::string effective_multiplicity(const AuditConfig& c) {
  if (c.multiplicity) return *c.multiplicity;
  return c.learners.size() <= 1 ? "none" : "";
}

LearnerSpec diagnostic_learner(const AuditConfig& c) { return c.learners.empty() ? LearnerSpec{} : c.learners.front(); }

void require_data(const AuditConfig& c, const char* command) {
  if (!c.data) throw InputError(std::string(command) + ": config has no 'data' section");
}

double adjusted_for(const ModelResult& m, const std::string& rule) {
  if (rule == "max-t") return m.p_max_t;
  if (rule == "bonferroni") return m.p_bonferroni;
  if (rule == "bh") return m.p_bh;
  return m.raw_p;
}

std::string audit_summary(const AuditReport& r, const ValidationResult& checks, double elapsed) {
  std::ostringstream os;
  os << "randomization audit (conditional randomization test)\n";
  os << "engine " << r.engine_version << ", config " << r.config_hash.substr(0, 16) << ", features "
     << r.feature_hash.substr(0, 16) << ", master seed " << r.master_seed << "\n";
  os << "design: " << describe(r.design) << "; analysis unit: " << r.analysis_unit << "\n";
  os << "folds: K=" << r.folds.k << (r.folds.grouped_by_cluster ? " (clusters kept intact)" : "")
     << "; resamples: B=" << r.resamples << (r.antithetic ? " (antithetic pairs)" : "")
     << "; score: " << to_string(r.score_kind) << "; multiplicity: " << r.multiplicity << "\n\n";

  os << std::left << std::setw(48) << "model" << std::setw(14) << "observed T" << std::setw(12) << "raw p"
     << std::setw(12) << "adjusted p" << "null mean (MC se)\n";
  double family = 1.0;
  for (const auto& m : r.models) {
    const double adj = adjusted_for(m, r.multiplicity);
    family = std::min(family, adj);
    os << std::left << std::setw(48) << m.spec.id << std::setw(14) << fixed(m.observed.statistic, 4) << std::setw(12)
       << fixed(m.raw_p, 4) << std::setw(12) << fixed(adj, 4) << fixed(m.null_mean, 4) << " (" << fixed(m.null_se, 4)
       << ")\n";
  }
  os << "\n";
  if (family <= r.alpha)
    os << "image-aligned deviation detected at alpha = " << fmt(r.alpha) << " (smallest adjusted p = "
       << fixed(family, 4) << ")\n";
  else
    os << "no image-aligned deviation detected at alpha = " << fmt(r.alpha) << " (smallest adjusted p = "
       << fixed(family, 4) << ")\n";
  if (r.unsafe_reuse_observed_model)
    os << "WARNING: observed models were reused across resamples; the p-values above are not valid.\n";
  for (const auto& note : r.notes) os << "note: " << note << "\n";
  os << "elapsed: " << fixed(elapsed, 2) << " s\n\n";
  os << "checklist\n" << checks.text;
  return os.str();
}

std::string diagnostic_summary(const DiagnosticReport& r, double alpha) {
  std::ostringstream os;
  os << r.kind << " audit: " << r.label << "\n";
  os << "These p-values compare against a " << r.reference
     << " reference. No assignment mechanism is registered for this indicator, so they are early-warning "
        "signals only.\n";
  if (!r.description.empty()) os << "frame: " << r.description << "\n";
  os << "learner: " << r.spec.id << "; folds: K=" << r.folds.k << "; reference draws: " << r.resamples << "\n\n";
  os << std::left << std::setw(24) << "variable" << std::setw(10) << "rate" << std::setw(14) << "observed T"
     << std::setw(12) << "raw p" << "max-T p\n";
  for (const auto& v : r.variables) {
    os << std::left << std::setw(24) << v.name << std::setw(10) << fixed(v.marginal_rate, 3);
    if (v.skipped) {
      os << v.notice << "\n";
      continue;
    }
    os << std::setw(14) << fixed(v.observed.statistic, 4) << std::setw(12) << fixed(v.raw_p, 4)
       << fixed(v.adjusted_p, 4) << (v.adjusted_p <= alpha ? "  (features predict this indicator)" : "") << "\n";
  }
  for (const auto& n : r.notices) os << "notice: " << n << "\n";
  return os.str();
}

std::string diagnostic_nulls_csv(const DiagnosticReport& r) {
  std::ostringstream os;
  os << "draw";
  std::vector<const DiagnosticVariable*> audited;
  for (const auto& v : r.variables)
    if (!v.skipped) {
      audited.push_back(&v);
      os << ",\"" << v.name << '"';
    }
  os << '\n';
  for (std::size_t b = 0; b < r.resamples; ++b) {
    os << b + 1;
    for (const auto* v : audited) os << ',' << fmt(v->null_statistics[b]);
    os << '\n';
  }
  return os.str();
}

DiagnosticOptions diagnostic_options(const AuditConfig& c) {
  DiagnosticOptions o;
  o.reference = c.reference;
  o.epsilon = c.epsilon;
  o.workers = c.workers;
  return o;
}

UnitTable prepared(const UnitTable& units, bool standardize) {
  return standardize ? standardize_features(units).units : units;
}

void stamp(nlohmann::json& doc, const AuditConfig& c, const std::string& feature_block) {
  doc["engine_version"] = kEngineVersion;
  doc["config_hash"] = config_hash(c);
  doc["feature_hash"] = feature_block;
  doc["provenance"] = c.provenance;
  doc["overrides"] = c.overrides;
}

}  // namespace

ValidationResult checklist(const AuditConfig& c) {
  ValidationResult out;
  auto row = [&](std::string item, std::string value, bool required) {
    out.rows.push_back({std::move(item), std::move(value), required});
  };

  row("Design", c.design ? describe(*c.design) : "", true);

  std::string window = provenance_text(c, "pre_treatment_window");
  if (const auto sensors = provenance_text(c, "sensors"); !sensors.empty())
    window += (window.empty() ? "" : "; ") + sensors;
  row("Pre-treatment window", window, false);

  std::vector<std::string> learners;
  for (const auto& l : c.learners) learners.push_back(learner_label(l));
  std::string embedding = join(learners, ", ");
  if (!embedding.empty() && c.data && !c.data->columns.features.empty())
    embedding += " on " + std::to_string(c.data->columns.features.size()) + " feature columns";
  if (const auto e = provenance_text(c, "embedding"); !e.empty() && !embedding.empty()) embedding += " (" + e + ")";
  row("Embedding set", embedding, true);

  row("Evaluation",
      c.folds ? std::to_string(*c.folds) + "-fold cross-fitting, fold seed " + std::to_string(c.fold_seed) +
                    ", T = out-of-sample " + (c.score == ScoreKind::log ? "log-likelihood" : "Brier") +
                    " improvement over design baseline"
              : "",
      true);

  row("Resampling",
      c.resamples && c.master_seed ? "B=" + std::to_string(*c.resamples) + ", master seed " +
                                         std::to_string(*c.master_seed) + (c.antithetic ? ", antithetic" : "") +
                                         ", draws from the registered design"
                                   : "",
      true);

  const auto rule = effective_multiplicity(c);
  row("Multiplicity", rule.empty() ? "" : (c.multiplicity ? rule : rule + " (single learner)"), true);

  row("Outputs", "report JSON, null statistics, summary -> " + output_dir(c).string(), true);

  std::string aux;
  if (c.frame) aux = "selection vs frame '" + c.frame->path.string() + "'";
  if (c.data && !c.data->columns.responses.empty())
    aux += (aux.empty() ? "" : "; ") + std::string("missingness of ") + join(c.data->columns.responses, ", ");
  if (!aux.empty()) aux += " (descriptive diagnostics, reported separately)";
  else aux = "not used";
  row("Auxiliary audits", aux, false);

  row("Ethics & transparency", provenance_text(c, "ethics"), false);

  std::ostringstream os;
  for (const auto& r : out.rows) {
    os << (r.bound() ? "[x] " : "[ ] ") << std::left << std::setw(24) << r.item
       << (r.bound() ? r.value : std::string(r.required ? "MISSING" : "MISSING (recommended)")) << "\n";
    if (r.required && !r.bound()) out.ok = false;
  }
  out.text = os.str();
  return out;
}

ValidationResult cmd_validate(const fs::path& config_path) { return checklist(load_config(config_path)); }

AuditOutputs run_audit(AuditConfig c) {
  const auto checks = checklist(c);
  if (!checks.ok) {
    std::vector<std::string> missing;
    for (const auto& r : checks.rows)
      if (r.required && !r.bound()) missing.push_back(r.item);
    throw InputError("config is incomplete; missing checklist rows: " + join(missing, ", ") +
                     " (run 'raudit validate' for details)");
  }
  require_data(c, "audit");
  if (!c.data->columns.treated)
    throw InputError("audit: column mapping 'treated' is not set (data.columns.treated)");

  const auto started = std::chrono::steady_clock::now();
  const UnitTable units = prepared(load_units(resolve(c, c.data->path), c.data->columns), c.standardize);
  const auto frame = prepare_analysis(units, *c.design, c.expand_clusters);
  const auto plan = plan_for_frame(frame, *c.folds, c.fold_seed, c.stratify);

  CrtOptions options;
  options.resamples = *c.resamples;
  options.master_seed = *c.master_seed;
  options.antithetic = c.antithetic;
  options.score_kind = c.score;
  options.epsilon = c.epsilon;
  options.workers = c.workers;
  options.unsafe_reuse_observed_model = c.unsafe_reuse_observed_model;

  AuditOutputs out;
  auto& report = out.report;
  report = run_crt(frame.table, frame.design, c.learners, plan, options);
  report.analysis_unit = frame.analysis_unit;
  report.notes.insert(report.notes.begin(), frame.notes.begin(), frame.notes.end());
  report.design = *c.design;
  report.config_hash = config_hash(c);
  report.multiplicity = effective_multiplicity(c);
  report.alpha = c.alpha;
  report.provenance = c.provenance;
  report.overrides = c.overrides;
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  const auto dir = output_dir(c);
  out.report_path = dir / "audit_report.json";
  out.nulls_path = dir / "audit_nulls.csv";
  out.summary_path = dir / "audit_summary.txt";
  out.summary = audit_summary(report, checks, elapsed);
  write_json(out.report_path, report_to_json(report));
  write_text(out.nulls_path, null_statistics_csv(report));
  write_text(out.summary_path, out.summary);
  return out;
}

AuditOutputs cmd_audit(const fs::path& config_path, const Overrides& overrides) {
  auto c = load_config(config_path);
  apply_overrides(c, overrides);
  return run_audit(std::move(c));
}

DiagnosticOutputs cmd_selection(const fs::path& config_path, const Overrides& overrides) {
  auto c = load_config(config_path);
  apply_overrides(c, overrides);
  require_data(c, "selection");

  SelectionFrame frame;
  if (c.frame) {
    const UnitTable enrolled = load_units(resolve(c, c.data->path), c.data->columns);
    const UnitTable others = load_units(resolve(c, c.frame->path), c.data->columns);
    frame = make_selection_frame(enrolled, others, c.frame->description);
  } else if (c.data->columns.selected) {
    frame.units = load_units(resolve(c, c.data->path), c.data->columns);
    frame.description = "combined table, S column '" + *c.data->columns.selected + "'";
  } else {
    throw InputError(
        "selection: needs either a frame file (frame.path) or an S column mapping (data.columns.selected)");
  }
  frame.units = prepared(frame.units, c.standardize);
  // Frame rows carry no design strata; folds only separate units.
  const auto plan = make_folds(frame.units, c.folds.value_or(5), c.fold_seed, false);

  DiagnosticOutputs out;
  out.report = selection_audit(frame, diagnostic_learner(c), plan, c.resamples.value_or(kDefaultResamples),
                               c.master_seed.value_or(0), diagnostic_options(c));
  auto doc = diagnostic_to_json(out.report);
  stamp(doc, c, feature_hash(frame.units));
  out.summary = diagnostic_summary(out.report, c.alpha);

  const auto dir = output_dir(c);
  out.files = {dir / "selection_report.json", dir / "selection_nulls.csv", dir / "selection_summary.txt"};
  write_json(out.files[0], doc);
  write_text(out.files[1], diagnostic_nulls_csv(out.report));
  write_text(out.files[2], out.summary);
  return out;
}

DiagnosticOutputs cmd_missingness(const fs::path& config_path, const Overrides& overrides) {
  auto c = load_config(config_path);
  apply_overrides(c, overrides);
  require_data(c, "missingness");
  if (c.data->columns.responses.empty())
    throw InputError("missingness: no response indicator columns mapped (data.columns.responses)");

  const UnitTable units = prepared(load_units(resolve(c, c.data->path), c.data->columns), c.standardize);
  const auto plan = make_folds(units, c.folds.value_or(5), c.fold_seed, c.stratify);

  DiagnosticOutputs out;
  out.report = missingness_audit(units, diagnostic_learner(c), plan, c.resamples.value_or(kDefaultResamples),
                                 c.master_seed.value_or(0), diagnostic_options(c));
  auto doc = diagnostic_to_json(out.report);
  stamp(doc, c, feature_hash(units));

  std::vector<std::vector<double>> rho;
  for (const auto& v : out.report.variables) rho.push_back(v.fitted);
  const auto weights = ipw_weights(units.responses, rho, c.ipw_floor);
  out.summary = diagnostic_summary(out.report, c.alpha) + "\nweights: w = R / max(rho_hat, " + fmt(c.ipw_floor) +
                ") from the cross-fitted response models\n";

  const auto dir = output_dir(c);
  out.files = {dir / "missingness_report.json", dir / "missingness_nulls.csv", dir / "missingness_summary.txt",
               dir / "missingness_weights.csv", dir / "missingness_weights.json"};
  write_json(out.files[0], doc);
  write_text(out.files[1], diagnostic_nulls_csv(out.report));
  write_text(out.files[2], out.summary);
  write_text(out.files[3], weight_table_csv(weights, units.ids));
  write_json(out.files[4], weight_table_to_json(weights));
  return out;
}

PowerOutputs cmd_power(const fs::path& config_path, const Overrides& overrides) {
  auto c = load_config(config_path);
  apply_overrides(c, overrides);
  if (!c.power) throw InputError("power: config has no 'power' section");
  if (c.power->replications < 20)
    throw InputError("power: replications must be at least 20 (got " + std::to_string(c.power->replications) + ")");

  AuditSettings settings;
  if (!c.learners.empty()) settings.specs = c.learners;
  settings.folds = c.folds.value_or(5);
  settings.stratify = c.stratify;
  settings.standardize = c.standardize;
  settings.expand_clusters = c.expand_clusters;
  settings.crt.resamples = c.resamples.value_or(kDefaultResamples);
  settings.crt.antithetic = c.antithetic;
  settings.crt.score_kind = c.score;
  settings.crt.epsilon = c.epsilon;
  settings.crt.workers = c.workers;

  PowerOutputs out;
  out.curve = simulate_power(c.power->scenario, settings, c.power->effects, c.power->replications, c.alpha,
                             c.master_seed.value_or(0));
  auto doc = power_curve_to_json(out.curve);
  stamp(doc, c, "");
  doc.erase("feature_hash");
  doc["scenario"] = scenario_to_json(c.power->scenario);

  const auto dir = output_dir(c);
  out.files = {dir / "power_curve.csv", dir / "power_curve.json"};
  write_text(out.files[0], power_curve_csv(out.curve));
  write_json(out.files[1], doc);
  return out;
}

// ---------------------------------------------------------------------------
// Builtin demos

std::vector<std::string> builtin_scenarios() {
  return {"placebo", "planted", "cluster", "selection", "selection-placebo", "missingness", "missingness-placebo",
          "power"};
}

namespace {

nlohmann::json base_config(std::uint64_t seed) {
  return {{"schema", kConfigSchema},
          {"learners", nlohmann::json::array({learner_to_json(LearnerSpec{})})},
          {"folds", {{"k", 5}, {"seed", seed}, {"stratify", true}}},
          {"resampling", {{"B", 199}, {"master_seed", seed}, {"workers", 1}}},
          {"score", "log"},
          {"multiplicity", "max-t"},
          {"alpha", 0.05},
          {"output", {{"dir", "out"}}},
          {"provenance",
           {{"pre_treatment_window", "synthetic features, no imagery"},
            {"embedding", "simulated Gaussian features"},
            {"ethics", "synthetic data; no human subjects"}}}};
}

fs::path write_dataset(const UnitTable& units, const fs::path& dir, const std::string& name) {
  const auto path = dir / name;
  fs::create_directories(dir);
  write_units(units, path);
  return path;
}

}  // namespace

std::vector<fs::path> cmd_synth(const std::string& scenario, std::uint64_t seed, const fs::path& out_dir) {
  const auto names = builtin_scenarios();
  if (std::find(names.begin(), names.end(), scenario) == names.end())
    throw InputError("synth: unknown builtin '" + scenario + "' (choose from " + join(names, ", ") + ")");
  fs::create_directories(out_dir);
  std::vector<fs::path> files;
  auto config = base_config(seed);
  config["provenance"]["builtin"] = scenario;

  if (scenario == "placebo" || scenario == "planted" || scenario == "cluster") {
    SyntheticScenario s;
    s.seed = seed;
    if (scenario == "placebo") {
      s.n = 100;
      s.d = 5;
      s.design = Design{CompleteDesign{50}, "builtin placebo"};
    } else if (scenario == "planted") {
      s.n = 200;
      s.d = 2;
      s.signal = LinearSignal{{2.0}};
      s.strength = 1.0;
      s.design = Design{CompleteDesign{100}, "builtin planted"};
    } else {
      s.n = 200;
      s.d = 3;
      s.clusters = 40;
      s.design = make_cluster_design(Design{CompleteDesign{20}, "clusters"}, "builtin cluster");
    }
    const auto units = generate_synthetic(s);
    files.push_back(write_dataset(units, out_dir, scenario + "_units.csv"));
    config["design"] = design_to_json(s.design);
    config["data"] = {{"path", files.back().filename().string()}, {"columns", mapping_to_json(canonical_mapping(units))}};
    if (scenario == "cluster") config["cluster_analysis"] = "aggregate";
    files.push_back(out_dir / (scenario + "_config.json"));
    write_json(files.back(), config);
    return files;
  }

  if (scenario == "selection" || scenario == "selection-placebo") {
    SyntheticScenario s;
    s.seed = seed;
    s.n = 200;
    s.d = 3;
    const UnitTable all = synthetic_features(s);
    std::vector<std::size_t> enrolled, others;
    if (scenario == "selection") {
      // enrolled iff phi_1 above its median
      std::vector<double> f1(all.features.col(0).data(), all.features.col(0).data() + all.n());
      std::vector<std::size_t> order(all.n());
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      std::sort(order.begin(), order.end(), [&](auto a, auto b) { return f1[a] < f1[b] || (f1[a] == f1[b] && a < b); });
      std::vector<std::uint8_t> high(all.n(), 0);
      for (std::size_t r = all.n() / 2; r < all.n(); ++r) high[order[r]] = 1;
      for (std::size_t i = 0; i < all.n(); ++i) (high[i] ? enrolled : others).push_back(i);
    } else {
      CounterRng rng(stable_hash(seed, 11));
      std::vector<std::size_t> perm(all.n());
      for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
      rng.shuffle(std::span<std::size_t>(perm));
      std::vector<std::uint8_t> pick(all.n(), 0);
      for (std::size_t r = 0; r < all.n() / 2; ++r) pick[perm[r]] = 1;
      for (std::size_t i = 0; i < all.n(); ++i) (pick[i] ? enrolled : others).push_back(i);
    }
    files.push_back(write_dataset(select_rows(all, enrolled), out_dir, scenario + "_enrolled.csv"));
    files.push_back(write_dataset(select_rows(all, others), out_dir, scenario + "_frame.csv"));
    auto mapping = canonical_mapping(all);
    config["data"] = {{"path", files[0].filename().string()}, {"columns", mapping_to_json(mapping)}};
    config["frame"] = {{"path", files[1].filename().string()},
                       {"description", scenario == "selection" ? "synthetic frame; enrolled iff f1 above its median"
                                                               : "synthetic frame; enrollment uniformly at random"}};
    files.push_back(out_dir / (scenario + "_config.json"));
    write_json(files.back(), config);
    return files;
  }

  if (scenario == "missingness" || scenario == "missingness-placebo") {
    SyntheticScenario s;
    s.seed = seed;
    s.n = 300;
    s.d = 3;
    UnitTable units = synthetic_features(s);
    CounterRng rng(stable_hash(seed, 12));
    ResponseColumn planted{"r_income", Labels(units.n())};
    ResponseColumn coin{"r_assets", Labels(units.n())};
    for (std::size_t i = 0; i < units.n(); ++i) {
      const double eta = scenario == "missingness" ? 2.0 * units.features(static_cast<Eigen::Index>(i), 0) : 0.0;
      planted.observed[i] = rng.bernoulli(1.0 / (1.0 + std::exp(-eta))) ? 1 : 0;
      coin.observed[i] = rng.bernoulli(0.5) ? 1 : 0;
    }
    units.responses = {planted, coin};
    files.push_back(write_dataset(units, out_dir, scenario + "_units.csv"));
    config["data"] = {{"path", files[0].filename().string()}, {"columns", mapping_to_json(canonical_mapping(units))}};
    config["diagnostics"] = {{"reference", "permute"}, {"ipw_floor", 0.01}};
    files.push_back(out_dir / (scenario + "_config.json"));
    write_json(files.back(), config);
    return files;
  }

  // power
  SyntheticScenario s;
  s.n = 100;
  s.d = 2;
  s.signal = LinearSignal{{1.0}};
  s.design = Design{CompleteDesign{50}, "builtin power"};
  config["design"] = design_to_json(s.design);
  config["resampling"]["B"] = 99;
  config["power"] = {{"scenario", scenario_to_json(s)}, {"effects", {0.0, 1.0, 2.0}}, {"replications", 20}};
  files.push_back(out_dir / "power_config.json");
  write_json(files.back(), config);
  return files;
}

}  // namespace raudit
