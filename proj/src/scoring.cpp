#include "raudit/scoring.hpp"

#include <algorithm>
#include <cmath>

#include "raudit/error.hpp"

namespace raudit {

std::string to_string(ScoreKind kind) { return kind == ScoreKind::log ? "log" : "brier"; }

ScoreKind score_kind_from_string(const std::string& name) {
  if (name == "log") return ScoreKind::log;
  if (name == "brier") return ScoreKind::brier;
  throw InputError("unknown score kind '" + name + "' (expected 'log' or 'brier')");
}

std::vector<double> clip_probabilities(std::span<const double> p, double epsilon) {
  if (!(epsilon > 0.0 && epsilon < 0.5)) throw InputError("clip_probabilities: epsilon must lie in (0, 0.5)");
  std::vector<double> out(p.begin(), p.end());
  for (auto& v : out) v = std::clamp(v, epsilon, 1.0 - epsilon);
  return out;
}

namespace {

void check_lengths(const Labels& labels, std::span<const double> probs, std::span<const double> q,
                   std::span<const std::size_t> folds, std::size_t fold_count) {
  if (labels.size() != probs.size() || labels.size() != q.size())
    throw InputError("score: labels, probabilities and baseline must have equal length (" +
                     std::to_string(labels.size()) + ", " + std::to_string(probs.size()) + ", " +
                     std::to_string(q.size()) + ")");
  if (!folds.empty()) {
    if (folds.size() != labels.size()) throw InputError("score: fold vector length mismatch");
    for (auto f : folds)
      if (f >= fold_count) throw InputError("score: fold index out of range");
  }
}

// Summation runs in unit order; per-fold totals use the same order.
template <class Term>
ScoreResult accumulate(ScoreKind kind, const Labels& labels, std::span<const double> probs, std::span<const double> q,
                       std::span<const std::size_t> folds, std::size_t fold_count, Term term) {
  check_lengths(labels, probs, q, folds, fold_count);
  ScoreResult r;
  r.kind = kind;
  std::vector<double> fold_model(folds.empty() ? 0 : fold_count, 0.0);
  std::vector<double> fold_base(fold_model.size(), 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (q[i] <= 0.0 || q[i] >= 1.0) continue;
    const double a = labels[i];
    const double m = term(a, probs[i]);
    const double b = term(a, q[i]);
    r.model += m;
    r.baseline += b;
    if (!folds.empty()) {
      fold_model[folds[i]] += m;
      fold_base[folds[i]] += b;
    }
  }
  r.statistic = r.model - r.baseline;
  for (std::size_t f = 0; f < fold_model.size(); ++f) r.per_fold.push_back(fold_model[f] - fold_base[f]);
  return r;
}

double log_term(double a, double p) { return a != 0.0 ? std::log(p) : std::log1p(-p); }
double brier_term(double a, double p) { return -(a - p) * (a - p); }

}  // namespace

ScoreResult delta_loglik_q(const Labels& labels, std::span<const double> probs, std::span<const double> q,
                           std::span<const std::size_t> folds, std::size_t fold_count) {
  return accumulate(ScoreKind::log, labels, probs, q, folds, fold_count, log_term);
}

ScoreResult delta_loglik(const Labels& labels, std::span<const double> probs, double a_bar,
                         std::span<const std::size_t> folds, std::size_t fold_count) {
  if (!(a_bar > 0.0 && a_bar < 1.0)) throw InputError("delta_loglik: a_bar must lie in (0,1)");
  const std::vector<double> q(labels.size(), a_bar);
  return delta_loglik_q(labels, probs, q, folds, fold_count);
}

ScoreResult brier_improvement(const Labels& labels, std::span<const double> probs, std::span<const double> q,
                              std::span<const std::size_t> folds, std::size_t fold_count) {
  return accumulate(ScoreKind::brier, labels, probs, q, folds, fold_count, brier_term);
}

ScoreResult score(ScoreKind kind, const Labels& labels, std::span<const double> probs, std::span<const double> q,
                  std::span<const std::size_t> folds, std::size_t fold_count) {
  return kind == ScoreKind::log ? delta_loglik_q(labels, probs, q, folds, fold_count)
                                : brier_improvement(labels, probs, q, folds, fold_count);
}

}  // namespace raudit
