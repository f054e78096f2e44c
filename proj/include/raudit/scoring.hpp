#pragma once

#include <span>
#include <string>
#include <vector>

#include "raudit/units.hpp"

namespace raudit {

enum class ScoreKind { log, brier };

std::string to_string(ScoreKind kind);
ScoreKind score_kind_from_string(const std::string& name);  // throws InputError

inline constexpr double kDefaultEpsilon = 1e-6;

/// T = model - baseline. For the log score, model = L and baseline = L0 (or L0*), in nats.
/// For the Brier score, model = -sum (A - p)^2 and baseline = -sum (A - q)^2, so positive
/// T always means the predictions beat the design baseline.
struct ScoreResult {
  ScoreKind kind = ScoreKind::log;
  double statistic = 0.0;
  double model = 0.0;
  double baseline = 0.0;
  std::vector<double> per_fold;  // empty unless folds were supplied
  bool operator==(const ScoreResult&) const = default;
};

/// Maps every entry into [epsilon, 1 - epsilon]; requires 0 < epsilon < 0.5.
std::vector<double> clip_probabilities(std::span<const double> p, double epsilon = kDefaultEpsilon);

/// Held-out log-likelihood improvement over a constant design rate `a_bar`.
ScoreResult delta_loglik(const Labels& labels, std::span<const double> probs, double a_bar,
                         std::span<const std::size_t> folds = {}, std::size_t fold_count = 0);

/// Same against unit baseline probabilities q. Units with q in {0,1} are skipped: their
/// labels are fixed by the design, so they carry no information on either side.
ScoreResult delta_loglik_q(const Labels& labels, std::span<const double> probs, std::span<const double> q,
                           std::span<const std::size_t> folds = {}, std::size_t fold_count = 0);

/// Brier improvement sum[(A - q)^2 - (A - p)^2]; same exclusion rule as delta_loglik_q.
ScoreResult brier_improvement(const Labels& labels, std::span<const double> probs, std::span<const double> q,
                              std::span<const std::size_t> folds = {}, std::size_t fold_count = 0);

ScoreResult score(ScoreKind kind, const Labels& labels, std::span<const double> probs, std::span<const double> q,
                  std::span<const std::size_t> folds = {}, std::size_t fold_count = 0);

}  // namespace raudit
