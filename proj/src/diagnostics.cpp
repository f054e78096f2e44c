#include "raudit/diagnostics.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <numeric>
#include <set>
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

struct Target {
  std::string name;
  Labels labels;
  double rate = 0.0;
};

// Shared engine for both audits: observed fit per target, then B reference draws shared
// across targets (one row permutation per draw), refit and rescored each time.
void run_reference(DiagnosticReport& report, const UnitTable& units, const std::vector<Target>& targets,
                   const std::vector<std::size_t>& audited, const LearnerSpec& spec, const FoldPlan& plan,
                   std::size_t resamples, std::uint64_t seed, const DiagnosticOptions& options) {
  check_spec(spec);
  if (resamples < 1) throw InputError("diagnostic: need at least one reference draw");
  if (plan.n() != units.n()) throw InputError("diagnostic: fold plan is bound to a different number of units");
  report.spec = spec;
  report.spec.id = learner_label(spec);
  report.folds = plan;
  report.resamples = resamples;
  report.seed = seed;
  report.epsilon = options.epsilon;
  report.reference = options.reference == ReferenceMechanism::permute ? "uniform permutation (rate-preserving)"
                                                                      : "Bernoulli redraw at the marginal rate";

  const CrossFitter fitter(units.features, plan);
  const std::size_t n = units.n();
  auto statistic = [&](const Labels& labels, double rate, std::vector<double>* fitted) {
    const std::vector<double> q(n, rate);
    const Eigen::VectorXd raw = fitter.predict(labels, spec, q, options.epsilon);
    auto probs = clip_probabilities(std::span<const double>(raw.data(), n), options.epsilon);
    auto s = delta_loglik_q(labels, probs, q, plan.fold, plan.k);
    if (fitted) *fitted = std::move(probs);
    return s;
  };

  for (auto t : audited) {
    auto& v = report.variables[t];
    v.observed = statistic(targets[t].labels, targets[t].rate, &v.fitted);
  }

  std::vector<std::vector<double>> nulls(resamples, std::vector<double>(audited.size(), 0.0));
  detail::parallel_for(resamples, options.workers, [&](std::size_t b) {
    for (std::size_t k = 0; k < audited.size(); ++k) {
      const auto& target = targets[audited[k]];
      const auto drawn = reference_labels(target.labels, options.reference, seed, b, k);
      nulls[b][k] = statistic(drawn, target.rate, nullptr).statistic;
    }
  });

  std::vector<double> observed;
  for (std::size_t k = 0; k < audited.size(); ++k) {
    auto& v = report.variables[audited[k]];
    for (std::size_t b = 0; b < resamples; ++b) v.null_statistics.push_back(nulls[b][k]);
    v.raw_p = p_value(v.observed.statistic, v.null_statistics);
    const double mean =
        std::accumulate(v.null_statistics.begin(), v.null_statistics.end(), 0.0) / static_cast<double>(resamples);
    double ss = 0.0;
    for (double x : v.null_statistics) ss += (x - mean) * (x - mean);
    v.null_mean = mean;
    v.null_se = resamples > 1 ? std::sqrt(ss / static_cast<double>(resamples - 1) / static_cast<double>(resamples)) : 0.0;
    v.histogram = null_histogram(v.null_statistics, v.observed.statistic);
    observed.push_back(v.observed.statistic);
  }
  if (!audited.empty()) {
    const auto adjusted = max_t_adjust(observed, nulls);
    for (std::size_t k = 0; k < audited.size(); ++k) report.variables[audited[k]].adjusted_p = adjusted[k];
  }
}

}  // namespace

Labels reference_labels(const Labels& observed, ReferenceMechanism mechanism, std::uint64_t seed, std::size_t draw,
                        std::size_t variable) {
  const std::size_t n = observed.size();
  Labels out(n);
  if (mechanism == ReferenceMechanism::permute) {
    // Same row permutation for every variable in a draw.
    CounterRng rng(stable_hash(seed, draw));
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(perm));
    for (std::size_t i = 0; i < n; ++i) out[i] = observed[perm[i]];
  } else {
    const double rate = n ? static_cast<double>(std::count(observed.begin(), observed.end(), 1)) / static_cast<double>(n) : 0.0;
    CounterRng rng(stable_hash(stable_hash(seed, draw), variable + 1));
    for (std::size_t i = 0; i < n; ++i) out[i] = rng.bernoulli(rate) ? 1 : 0;
  }
  return out;
}

SelectionFrame make_selection_frame(const UnitTable& enrolled, const UnitTable& frame, std::string description) {
  if (enrolled.feature_names != frame.feature_names)
    throw InputError("selection frame: enrolled and frame tables must share the same feature columns");
  SelectionFrame out;
  out.description = std::move(description);
  auto& u = out.units;
  u.feature_names = enrolled.feature_names;
  u.features.resize(static_cast<Eigen::Index>(enrolled.n() + frame.n()), enrolled.features.cols());
  u.features << enrolled.features, frame.features;
  u.ids = enrolled.ids;
  u.ids.insert(u.ids.end(), frame.ids.begin(), frame.ids.end());
  u.selected = Labels(enrolled.n(), 1);
  u.selected->insert(u.selected->end(), frame.n(), 0);
  check_table(u);
  return out;
}

DiagnosticReport selection_audit(const SelectionFrame& frame, const LearnerSpec& spec, const FoldPlan& plan,
                                 std::size_t resamples, std::uint64_t seed, const DiagnosticOptions& options) {
  if (!frame.units.selected) throw InputError("selection audit: no selection (S) column");
  const auto& s = *frame.units.selected;
  const auto enrolled = static_cast<std::size_t>(std::count(s.begin(), s.end(), 1));
  if (enrolled == 0 || enrolled == s.size())
    throw InputError("selection audit: S has a single class (" + std::to_string(enrolled) + " of " +
                     std::to_string(s.size()) + " enrolled)");
  DiagnosticReport report;
  report.kind = "selection";
  report.description = frame.description;
  std::vector<Target> targets{{"selected", s, static_cast<double>(enrolled) / static_cast<double>(s.size())}};
  report.variables.push_back({});
  report.variables[0].name = "selected";
  report.variables[0].marginal_rate = targets[0].rate;
  run_reference(report, frame.units, targets, {0}, spec, plan, resamples, seed, options);
  return report;
}

DiagnosticReport missingness_audit(const UnitTable& units, const LearnerSpec& spec, const FoldPlan& plan,
                                   std::size_t resamples, std::uint64_t seed, const DiagnosticOptions& options) {
  if (units.responses.empty()) throw InputError("missingness audit: no response indicator columns");
  DiagnosticReport report;
  report.kind = "missingness";
  std::vector<Target> targets;
  std::vector<std::size_t> audited;
  for (const auto& col : units.responses) {
    const auto observed = static_cast<std::size_t>(std::count(col.observed.begin(), col.observed.end(), 1));
    DiagnosticVariable v;
    v.name = col.name;
    v.marginal_rate = static_cast<double>(observed) / static_cast<double>(col.observed.size());
    if (observed == 0 || observed == col.observed.size()) {
      v.skipped = true;
      v.notice = observed == 0 ? "skipped: variable missing for every unit" : "skipped: variable observed for every unit";
      v.fitted.assign(col.observed.size(), observed == 0 ? 0.0 : 1.0);
      report.notices.push_back(col.name + ": " + v.notice);
    } else {
      audited.push_back(targets.size());
    }
    targets.push_back({col.name, col.observed, v.marginal_rate});
    report.variables.push_back(std::move(v));
  }
  run_reference(report, units, targets, audited, spec, plan, resamples, seed, options);
  return report;
}

nlohmann::json diagnostic_to_json(const DiagnosticReport& r) {
  nlohmann::json vars = nlohmann::json::array();
  for (const auto& v : r.variables) {
    nlohmann::json j = {{"name", v.name}, {"skipped", v.skipped}, {"marginal_rate", v.marginal_rate}};
    if (v.skipped) {
      j["notice"] = v.notice;
    } else {
      j["observed"] = {{"statistic", v.observed.statistic},
                       {"model", v.observed.model},
                       {"baseline", v.observed.baseline},
                       {"per_fold", v.observed.per_fold}};
      j["raw_p"] = v.raw_p;
      j["adjusted_p_max_t"] = v.adjusted_p;
      j["null"] = {{"statistics", v.null_statistics}, {"mean", v.null_mean}, {"se", v.null_se}};
      j["histogram"] = {{"rule", v.histogram.rule},
                        {"edges", v.histogram.edges},
                        {"counts", v.histogram.counts},
                        {"observed", v.histogram.observed}};
    }
    vars.push_back(std::move(j));
  }
  return {{"schema", "raudit.diagnostic/1"},
          {"label", r.label},
          {"kind", r.kind},
          {"description", r.description},
          {"reference", r.reference},
          {"learner", learner_to_json(r.spec)},
          {"folds", fold_plan_to_json(r.folds)},
          {"resamples", r.resamples},
          {"seed", r.seed},
          {"epsilon", r.epsilon},
          {"variables", vars},
          {"notices", r.notices}};
}

WeightTable ipw_weights(const std::vector<ResponseColumn>& responses, const std::vector<std::vector<double>>& rho_hat,
                        double floor) {
  if (!(floor > 0.0 && floor < 1.0)) throw InputError("ipw_weights: floor must lie in (0,1)");
  if (rho_hat.size() != responses.size())
    throw InputError("ipw_weights: " + std::to_string(rho_hat.size()) + " response models for " +
                     std::to_string(responses.size()) + " variables");
  WeightTable table;
  table.floor = floor;
  for (std::size_t j = 0; j < responses.size(); ++j) {
    const auto& r = responses[j].observed;
    if (rho_hat[j].size() != r.size())
      throw InputError("ipw_weights: response model for '" + responses[j].name + "' has wrong length");
    std::vector<double> w(r.size(), 0.0);
    for (std::size_t i = 0; i < r.size(); ++i)
      if (r[i]) w[i] = 1.0 / std::max(rho_hat[j][i], floor);
    table.names.push_back(responses[j].name);
    table.weights.push_back(std::move(w));
  }
  return table;
}

std::string weight_table_csv(const WeightTable& table, const std::vector<std::string>& unit_ids) {
  std::ostringstream os;
  os << "unit_id";
  for (const auto& name : table.names) os << ",w_" << name;
  os << '\n';
  for (std::size_t i = 0; i < unit_ids.size(); ++i) {
    os << unit_ids[i];
    for (const auto& w : table.weights) os << ',' << format_double(w[i]);
    os << '\n';
  }
  return os.str();
}

nlohmann::json weight_table_to_json(const WeightTable& table) {
  return {{"schema", "raudit.weights/1"},
          {"label", kDescriptiveLabel},
          {"floor", table.floor},
          {"variables", table.names},
          {"rule", "w_ij = R_ij / max(rho_hat_ij, floor)"}};
}

}  // namespace raudit
