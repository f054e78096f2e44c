#include "raudit/crt.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "parallel.hpp"
#include "raudit/error.hpp"
#include "raudit/rng.hpp"

namespace raudit {
namespace {

std::string format_double(double v) {
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

double quantile_sorted(const std::vector<double>& sorted, double prob) {
  if (sorted.size() == 1) return sorted.front();
  const double h = (static_cast<double>(sorted.size()) - 1.0) * prob;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

struct Moments {
  double mean = 0.0;
  double sd = 0.0;
  double se = 0.0;
};

Moments moments(std::span<const double> x) {
  Moments m;
  if (x.empty()) return m;
  const double n = static_cast<double>(x.size());
  m.mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  if (x.size() > 1) {
    double ss = 0.0;
    for (double v : x) ss += (v - m.mean) * (v - m.mean);
    m.sd = std::sqrt(ss / (n - 1.0));
    m.se = m.sd / std::sqrt(n);
  }
  return m;
}

}  // namespace

// ---------------------------------------------------------------------------
// p-values and multiplicity

double p_value(double observed, std::span<const double> nulls) {
  if (nulls.empty()) throw EngineError("p_value: empty null distribution");
  std::size_t exceed = 0;
  for (double t : nulls) exceed += t >= observed;
  return static_cast<double>(1 + exceed) / static_cast<double>(nulls.size() + 1);
}

std::vector<double> max_t_adjust(std::span<const double> observed, const std::vector<std::vector<double>>& nulls) {
  if (nulls.empty()) throw EngineError("max_t_adjust: empty null distribution");
  std::vector<double> maxima;
  maxima.reserve(nulls.size());
  for (const auto& row : nulls) {
    if (row.size() != observed.size())
      throw EngineError("max_t_adjust: null row has " + std::to_string(row.size()) + " columns, expected " +
                        std::to_string(observed.size()));
    maxima.push_back(*std::max_element(row.begin(), row.end()));
  }
  std::vector<double> out;
  for (double t : observed) out.push_back(p_value(t, maxima));
  return out;
}

std::vector<double> bonferroni_adjust(std::span<const double> raw) {
  std::vector<double> out;
  const double m = static_cast<double>(raw.size());
  for (double p : raw) out.push_back(std::min(1.0, m * p));
  return out;
}

std::vector<double> bh_adjust(std::span<const double> raw) {
  const std::size_t m = raw.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return raw[a] < raw[b]; });
  std::vector<double> out(m);
  double running = 1.0;
  for (std::size_t r = m; r-- > 0;) {
    const double candidate = raw[order[r]] * static_cast<double>(m) / static_cast<double>(r + 1);
    running = std::min(running, candidate);
    out[order[r]] = std::min(1.0, running);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Histogram

Histogram null_histogram(std::span<const double> sample, double observed) {
  Histogram h;
  h.rule = "freedman-diaconis";
  h.observed = observed;
  if (sample.empty()) return h;
  std::vector<double> sorted(sample.begin(), sample.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front();
  const double hi = sorted.back();
  const double n = static_cast<double>(sorted.size());
  const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
  double width = 2.0 * iqr / std::cbrt(n);
  std::size_t bins = 1;
  if (hi > lo) {
    if (!(width > 0.0)) {
      h.rule = "sturges (zero IQR)";
      bins = static_cast<std::size_t>(std::ceil(std::log2(n))) + 1;
    } else {
      bins = static_cast<std::size_t>(std::ceil((hi - lo) / width));
    }
    bins = std::clamp<std::size_t>(bins, 1, 1000);
    width = (hi - lo) / static_cast<double>(bins);
    for (std::size_t k = 0; k < bins; ++k) h.edges.push_back(lo + static_cast<double>(k) * width);
    h.edges.push_back(hi);
  } else {
    h.edges = {lo - 0.5, hi + 0.5};
  }
  h.counts.assign(bins, 0);
  for (double v : sorted) {
    std::size_t k = hi > lo ? static_cast<std::size_t>((v - lo) / width) : 0;
    ++h.counts[std::min(k, bins - 1)];
  }
  return h;
}

// ---------------------------------------------------------------------------
// Analysis frame

AnalysisFrame prepare_analysis(const UnitTable& units, const Design& design, bool expand_clusters) {
  const auto* cluster = std::get_if<ClusterDesign>(&design.variant);
  if (!cluster) return {units, design, "unit", {}};
  if (expand_clusters)
    return {units, design, "unit (cluster-expanded)",
            {"cluster design analysed on unit rows; folds keep clusters intact"}};
  UnitTable table = aggregate_by_cluster(units);
  return {std::move(table), *cluster->inner, "cluster",
          {"cluster design analysed on one row per cluster (cluster-mean features, clusters unweighted)"}};
}

FoldPlan plan_for_frame(const AnalysisFrame& frame, std::size_t k, std::uint64_t seed, bool stratify) {
  if (std::holds_alternative<ClusterDesign>(frame.design.variant))
    return make_group_folds(cluster_members(frame.table), frame.table.n(), k, seed);
  return make_folds(frame.table, k, seed, stratify);
}

// ---------------------------------------------------------------------------
// CRT

AuditReport run_crt(const UnitTable& units, const Design& design, const std::vector<LearnerSpec>& specs,
                    const FoldPlan& plan, const CrtOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  if (!units.treated) throw InputError("run_crt: unit table has no observed treatment column");
  if (specs.empty()) throw InputError("run_crt: at least one learner spec is required");
  for (const auto& s : specs) check_spec(s);
  if (options.resamples < kMinResamples)
    throw EngineError("run_crt: B must be at least " + std::to_string(kMinResamples));
  if (plan.n() != units.n()) throw InputError("run_crt: fold plan is bound to a different number of units");
  if (!(options.epsilon > 0.0 && options.epsilon < 0.5)) throw InputError("run_crt: epsilon must lie in (0, 0.5)");

  const BoundDesign bound(design, units);
  if (options.antithetic) {
    if (auto blocker = bound.complement_blocker(); !blocker.empty())
      throw EngineError("antithetic resampling not applicable: " + blocker);
    if (options.resamples % 2 != 0) throw EngineError("antithetic resampling needs an even B");
  }

  AuditReport report;
  report.master_seed = options.master_seed;
  report.design = design;
  report.folds = plan;
  report.resamples = options.resamples;
  report.antithetic = options.antithetic;
  report.score_kind = options.score_kind;
  report.epsilon = options.epsilon;
  report.unsafe_reuse_observed_model = options.unsafe_reuse_observed_model;
  report.feature_hash = feature_hash(units);

  const Labels& observed = *units.treated;
  for (const auto& v : bound.check(observed)) report.notes.push_back("observed assignment: " + v.message);
  const auto baseline = bound.baseline();
  for (auto i : baseline.degenerate) report.degenerate_units.push_back(units.ids[i]);
  if (!baseline.degenerate.empty())
    report.notes.push_back(std::to_string(baseline.degenerate.size()) +
                           " unit(s) have baseline probability 0 or 1 and are excluded from scoring");
  if (options.unsafe_reuse_observed_model)
    report.notes.push_back("UNSAFE: models fitted on the observed assignment were reused for every resample; "
                           "p-values carry no finite-sample validity guarantee");

  const CrossFitter fitter(units.features, plan);
  const std::span<const double> q(baseline.q);
  const std::size_t models = specs.size();
  std::vector<std::vector<double>> observed_probs(models);
  auto statistic = [&](const Labels& labels, const std::vector<double>& probs) {
    return score(options.score_kind, labels, probs, q, plan.fold, plan.k);
  };

  report.models.resize(models);
  for (std::size_t m = 0; m < models; ++m) {
    auto& result = report.models[m];
    result.spec = specs[m];
    result.spec.id = learner_label(specs[m]);
    const Eigen::VectorXd raw = fitter.predict(observed, specs[m], q, options.epsilon, &result.observed_degraded_folds);
    observed_probs[m] = clip_probabilities(std::span<const double>(raw.data(), static_cast<std::size_t>(raw.size())),
                                           options.epsilon);
    result.observed = statistic(observed, observed_probs[m]);
  }

  const std::size_t b_total = options.resamples;
  report.resample_seeds.resize(b_total);
  report.resample_is_complement.assign(b_total, 0);
  std::vector<std::vector<double>> nulls(b_total, std::vector<double>(models, 0.0));

  auto evaluate = [&](std::size_t b, const AssignmentVector& a) {
    report.resample_seeds[b] = *a.seed;
    for (std::size_t m = 0; m < models; ++m) {
      if (options.unsafe_reuse_observed_model) {
        nulls[b][m] = statistic(a.values, observed_probs[m]).statistic;
        continue;
      }
      const Eigen::VectorXd raw = fitter.predict(a.values, specs[m], q, options.epsilon);
      const auto probs =
          clip_probabilities(std::span<const double>(raw.data(), static_cast<std::size_t>(raw.size())), options.epsilon);
      nulls[b][m] = statistic(a.values, probs).statistic;
    }
  };

  const std::size_t items = options.antithetic ? b_total / 2 : b_total;
  detail::parallel_for(items, options.workers, [&](std::size_t item) {
    if (options.antithetic) {
      const std::size_t b = 2 * item;
      const auto draw = bound.draw(stable_hash(options.master_seed, b));
      evaluate(b, draw);
      evaluate(b + 1, *bound.complement(draw));
      report.resample_is_complement[b + 1] = 1;
    } else {
      evaluate(item, bound.draw(stable_hash(options.master_seed, item)));
    }
  });

  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  std::vector<double> observed_t;
  std::vector<double> raw_p;
  for (std::size_t m = 0; m < models; ++m) {
    auto& result = report.models[m];
    result.null.model_id = result.spec.id;
    result.null.antithetic = options.antithetic;
    result.null.elapsed_seconds = elapsed;
    result.null.statistics.reserve(b_total);
    for (std::size_t b = 0; b < b_total; ++b) result.null.statistics.push_back(nulls[b][m]);
    result.raw_p = p_value(result.observed.statistic, result.null.statistics);
    const auto mom = moments(result.null.statistics);
    result.null_mean = mom.mean;
    result.null_sd = mom.sd;
    // Antithetic pairs are dependent; their SE uses pair means.
    if (options.antithetic) {
      std::vector<double> pair_means;
      for (std::size_t b = 0; b + 1 < b_total; b += 2)
        pair_means.push_back(0.5 * (result.null.statistics[b] + result.null.statistics[b + 1]));
      result.null_se = moments(pair_means).se;
    } else {
      result.null_se = mom.se;
    }
    result.histogram = null_histogram(result.null.statistics, result.observed.statistic);
    observed_t.push_back(result.observed.statistic);
    raw_p.push_back(result.raw_p);
  }
  const auto max_t = max_t_adjust(observed_t, nulls);
  const auto bonf = bonferroni_adjust(raw_p);
  const auto bh = bh_adjust(raw_p);
  for (std::size_t m = 0; m < models; ++m) {
    report.models[m].p_max_t = max_t[m];
    report.models[m].p_bonferroni = bonf[m];
    report.models[m].p_bh = bh[m];
  }
  return report;
}

ExactCrt enumerated_crt(const UnitTable& units, const Design& design, const LearnerSpec& spec, const FoldPlan& plan,
                        const CrtOptions& options, std::size_t cap) {
  if (!units.treated) throw InputError("enumerated_crt: unit table has no observed treatment column");
  const BoundDesign bound(design, units);
  auto listed = bound.enumerate(cap);
  if (const auto* too = std::get_if<TooLarge>(&listed))
    throw EngineError("enumerated_crt: design has " + format_double(too->count) + " assignments, cap is " +
                      std::to_string(cap));
  const auto& all = std::get<std::vector<WeightedAssignment>>(listed);
  const auto q = bound.baseline().q;
  const CrossFitter fitter(units.features, plan);
  auto statistic = [&](const Labels& labels) {
    const Eigen::VectorXd raw = fitter.predict(labels, spec, q, options.epsilon);
    const auto probs =
        clip_probabilities(std::span<const double>(raw.data(), static_cast<std::size_t>(raw.size())), options.epsilon);
    return score(options.score_kind, labels, probs, q, plan.fold, plan.k).statistic;
  };
  ExactCrt out;
  out.total = static_cast<double>(all.size());
  out.observed = statistic(*units.treated);
  out.statistics.resize(all.size());
  detail::parallel_for(all.size(), options.workers,
                       [&](std::size_t k) { out.statistics[k] = statistic(all[k].values); });
  double tail = 0.0, mass = 0.0;
  for (std::size_t k = 0; k < all.size(); ++k) {
    out.probabilities.push_back(all[k].probability);
    mass += all[k].probability;
    if (out.statistics[k] >= out.observed) tail += all[k].probability;
  }
  out.p = tail / mass;
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json report_to_json(const AuditReport& r) {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : r.models) {
    models.push_back({
        {"id", m.spec.id},
        {"learner", learner_to_json(m.spec)},
        {"observed",
         {{"statistic", m.observed.statistic},
          {"model", m.observed.model},
          {"baseline", m.observed.baseline},
          {"per_fold", m.observed.per_fold},
          {"kind", to_string(m.observed.kind)}}},
        {"observed_degraded_folds", m.observed_degraded_folds},
        {"raw_p", m.raw_p},
        {"adjusted_p", {{"max_t", m.p_max_t}, {"bonferroni", m.p_bonferroni}, {"bh", m.p_bh}}},
        {"null",
         {{"statistics", m.null.statistics},
          {"antithetic", m.null.antithetic},
          {"mean", m.null_mean},
          {"sd", m.null_sd},
          {"se", m.null_se}}},
        {"histogram",
         {{"rule", m.histogram.rule},
          {"edges", m.histogram.edges},
          {"counts", m.histogram.counts},
          {"observed", m.histogram.observed}}},
    });
  }
  return {
      {"schema", r.schema},
      {"engine_version", r.engine_version},
      {"config_hash", r.config_hash},
      {"feature_hash", r.feature_hash},
      {"master_seed", r.master_seed},
      {"design", design_to_json(r.design)},
      {"design_description", describe(r.design)},
      {"analysis_unit", r.analysis_unit},
      {"folds", fold_plan_to_json(r.folds)},
      {"resamples", r.resamples},
      {"antithetic", r.antithetic},
      {"score_kind", to_string(r.score_kind)},
      {"epsilon", r.epsilon},
      {"unsafe_reuse_observed_model", r.unsafe_reuse_observed_model},
      {"validity", r.unsafe_reuse_observed_model ? "none (unsafe model reuse)"
                                                 : "finite-sample valid under the registered design"},
      {"degenerate_units", r.degenerate_units},
      {"resample_seeds", r.resample_seeds},
      {"resample_is_complement", r.resample_is_complement},
      {"models", models},
      {"multiplicity", r.multiplicity},
      {"alpha", r.alpha},
      {"notes", r.notes},
      {"provenance", r.provenance},
      {"overrides", r.overrides},
  };
}

AuditReport report_from_json(const nlohmann::json& j) {
  AuditReport r;
  try {
    r.schema = j.at("schema").get<std::string>();
    if (r.schema != kReportSchema) throw InputError("report: unsupported schema '" + r.schema + "'");
    r.engine_version = j.at("engine_version").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.feature_hash = j.at("feature_hash").get<std::string>();
    r.master_seed = j.at("master_seed").get<std::uint64_t>();
    r.design = design_from_json(j.at("design"));
    r.analysis_unit = j.at("analysis_unit").get<std::string>();
    r.folds = fold_plan_from_json(j.at("folds"));
    r.resamples = j.at("resamples").get<std::size_t>();
    r.antithetic = j.at("antithetic").get<bool>();
    r.score_kind = score_kind_from_string(j.at("score_kind").get<std::string>());
    r.epsilon = j.at("epsilon").get<double>();
    r.unsafe_reuse_observed_model = j.at("unsafe_reuse_observed_model").get<bool>();
    r.degenerate_units = j.at("degenerate_units").get<std::vector<std::string>>();
    r.resample_seeds = j.at("resample_seeds").get<std::vector<std::uint64_t>>();
    r.resample_is_complement = j.at("resample_is_complement").get<std::vector<std::uint8_t>>();
    for (const auto& mj : j.at("models")) {
      ModelResult m;
      m.spec = learner_from_json(mj.at("learner"));
      const auto& o = mj.at("observed");
      m.observed.statistic = o.at("statistic").get<double>();
      m.observed.model = o.at("model").get<double>();
      m.observed.baseline = o.at("baseline").get<double>();
      m.observed.per_fold = o.at("per_fold").get<std::vector<double>>();
      m.observed.kind = score_kind_from_string(o.at("kind").get<std::string>());
      m.observed_degraded_folds = mj.at("observed_degraded_folds").get<std::size_t>();
      m.raw_p = mj.at("raw_p").get<double>();
      const auto& adj = mj.at("adjusted_p");
      m.p_max_t = adj.at("max_t").get<double>();
      m.p_bonferroni = adj.at("bonferroni").get<double>();
      m.p_bh = adj.at("bh").get<double>();
      const auto& nj = mj.at("null");
      m.null.model_id = mj.at("id").get<std::string>();
      m.null.statistics = nj.at("statistics").get<std::vector<double>>();
      m.null.antithetic = nj.at("antithetic").get<bool>();
      m.null_mean = nj.at("mean").get<double>();
      m.null_sd = nj.at("sd").get<double>();
      m.null_se = nj.at("se").get<double>();
      const auto& hj = mj.at("histogram");
      m.histogram.rule = hj.at("rule").get<std::string>();
      m.histogram.edges = hj.at("edges").get<std::vector<double>>();
      m.histogram.counts = hj.at("counts").get<std::vector<std::size_t>>();
      m.histogram.observed = hj.at("observed").get<double>();
      r.models.push_back(std::move(m));
    }
    r.multiplicity = j.at("multiplicity").get<std::string>();
    r.alpha = j.at("alpha").get<double>();
    r.notes = j.at("notes").get<std::vector<std::string>>();
    r.provenance = j.at("provenance");
    r.overrides = j.at("overrides");
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("report: malformed document: ") + e.what());
  }
  return r;
}

std::string null_statistics_csv(const AuditReport& report) {
  std::ostringstream os;
  os << "resample,seed,complement";
  for (const auto& m : report.models) os << ",\"" << m.spec.id << '"';
  os << '\n';
  for (std::size_t b = 0; b < report.resamples; ++b) {
    os << b + 1 << ',' << report.resample_seeds[b] << ',' << int(report.resample_is_complement[b]);
    for (const auto& m : report.models) os << ',' << format_double(m.null.statistics[b]);
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Synthetic audits and power

AuditReport run_synthetic_audit(const SyntheticScenario& scenario, const AuditSettings& settings) {
  UnitTable units = generate_synthetic(scenario);
  if (settings.standardize) units = standardize_features(units).units;
  const auto frame = prepare_analysis(units, scenario.design, settings.expand_clusters);
  const auto plan = plan_for_frame(frame, settings.folds, settings.fold_seed, settings.stratify);
  auto report = run_crt(frame.table, frame.design, settings.specs, plan, settings.crt);
  report.analysis_unit = frame.analysis_unit;
  report.notes.insert(report.notes.begin(), frame.notes.begin(), frame.notes.end());
  return report;
}

PowerCurve simulate_power(const SyntheticScenario& scenario, const AuditSettings& settings,
                          const std::vector<double>& effects, std::size_t replications, double alpha,
                          std::uint64_t master_seed) {
  if (replications < 20) throw InputError("simulate_power: replications must be at least 20");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InputError("simulate_power: alpha must lie in (0,1)");
  if (effects.empty()) throw InputError("simulate_power: no effect sizes given");
  PowerCurve curve;
  curve.alpha = alpha;
  for (std::size_t e = 0; e < effects.size(); ++e) {
    PowerPoint point;
    point.effect = effects[e];
    point.replications = replications;
    point.records.resize(replications);
    detail::parallel_for(replications, settings.crt.workers, [&](std::size_t r) {
      const std::uint64_t seed = stable_hash(stable_hash(master_seed, e), r);
      SyntheticScenario s = scenario;
      s.seed = seed;
      s.strength = effects[e];
      AuditSettings local = settings;
      local.fold_seed = stable_hash(seed, 101);
      local.crt.master_seed = stable_hash(seed, 102);
      local.crt.workers = 1;
      const auto report = run_synthetic_audit(s, local);
      auto& rec = point.records[r];
      rec.seed = seed;
      rec.observed = report.models.front().observed.statistic;
      rec.raw_p = report.models.front().raw_p;
      rec.family_p = 1.0;
      for (const auto& m : report.models) rec.family_p = std::min(rec.family_p, m.p_max_t);
      rec.null_mean = report.models.front().null_mean;
      rec.null_se = report.models.front().null_se;
    });
    std::size_t rejections = 0;
    for (const auto& rec : point.records) rejections += rec.family_p <= alpha;
    point.rejection_rate = static_cast<double>(rejections) / static_cast<double>(replications);
    point.standard_error =
        std::sqrt(point.rejection_rate * (1.0 - point.rejection_rate) / static_cast<double>(replications));
    curve.points.push_back(std::move(point));
  }
  return curve;
}

nlohmann::json power_curve_to_json(const PowerCurve& curve) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& p : curve.points) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : p.records)
      records.push_back({{"seed", r.seed},
                         {"observed", r.observed},
                         {"raw_p", r.raw_p},
                         {"family_p", r.family_p},
                         {"null_mean", r.null_mean},
                         {"null_se", r.null_se}});
    points.push_back({{"effect", std::isinf(p.effect) ? nlohmann::json(p.effect > 0 ? "inf" : "-inf") : nlohmann::json(p.effect)},
                      {"rejection_rate", p.rejection_rate},
                      {"standard_error", p.standard_error},
                      {"replications", p.replications},
                      {"records", records}});
  }
  return {{"schema", "raudit.power/1"}, {"alpha", curve.alpha}, {"points", points}};
}

std::string power_curve_csv(const PowerCurve& curve) {
  std::ostringstream os;
  os << "effect,rejection_rate,standard_error,replications\n";
  for (const auto& p : curve.points)
    os << format_double(p.effect) << ',' << format_double(p.rejection_rate) << ',' << format_double(p.standard_error)
       << ',' << p.replications << '\n';
  return os.str();
}

}  // namespace raudit
