#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "raudit/units.hpp"

namespace raudit {

/// Fixed cross-fitting partition; held constant across every resample.
struct FoldPlan {
  std::size_t k = 0;
  std::vector<std::size_t> fold;  // fold index in [0, k) per unit
  std::uint64_t seed = 0;
  bool stratified = false;          // balanced within blocks
  bool grouped_by_cluster = false;  // whole clusters kept in one fold
  bool operator==(const FoldPlan&) const = default;

  std::size_t n() const { return fold.size(); }
  std::vector<std::size_t> sizes() const;
};

/// Balanced K-fold split. With `stratify` and a block column, fold sizes also differ by
/// at most one inside every block. Throws InputError unless 2 <= K <= n.
FoldPlan make_folds(const UnitTable& units, std::size_t k, std::uint64_t seed, bool stratify);

/// K-fold split that keeps each group (cluster) intact; groups are balanced by count.
FoldPlan make_group_folds(const std::vector<std::vector<std::size_t>>& groups, std::size_t n,
                          std::size_t k, std::uint64_t seed);

nlohmann::json fold_plan_to_json(const FoldPlan& plan);
FoldPlan fold_plan_from_json(const nlohmann::json& doc);

struct LogisticSpec {
  double l2_penalty = 1.0;
  std::size_t max_iterations = 100;
  double tolerance = 1e-8;
  bool operator==(const LogisticSpec&) const = default;
};

struct StumpsSpec {
  std::size_t rounds = 50;
  double learning_rate = 0.1;
  std::size_t min_leaf = 5;
  bool operator==(const StumpsSpec&) const = default;
};

struct LearnerSpec {
  std::variant<LogisticSpec, StumpsSpec> kind = LogisticSpec{};
  std::uint64_t train_seed = 0;
  std::string id;  // label used in reports; generated from the kind when empty
  bool operator==(const LearnerSpec&) const = default;
};

void check_spec(const LearnerSpec& spec);  // throws InputError
std::string learner_label(const LearnerSpec& spec);
nlohmann::json learner_to_json(const LearnerSpec& spec);
LearnerSpec learner_from_json(const nlohmann::json& doc);

struct LogisticModel {
  double intercept = 0.0;
  Eigen::VectorXd coefficients;
  bool converged = false;
  std::size_t iterations = 0;
  double gradient_norm = 0.0;
};

struct Stump {
  std::size_t feature = 0;
  double threshold = 0.0;  // x <= threshold goes left
  double left = 0.0;
  double right = 0.0;
};

struct StumpModel {
  double base_score = 0.0;
  std::vector<Stump> stumps;
  std::vector<double> training_loss;  // mean log-loss before round 1 and after each round
};

struct ConstantModel {
  double probability = 0.5;
};

using FittedModel = std::variant<LogisticModel, StumpModel, ConstantModel>;

/// Fits a binary-probability model. One-class labels give a ConstantModel at the clipped
/// class rate (epsilon or 1 - epsilon). Throws InputError on empty input.
FittedModel fit(const LearnerSpec& spec, const Eigen::MatrixXd& features, const Labels& labels,
                double epsilon = 1e-6);

/// Unclipped probabilities.
Eigen::VectorXd predict(const FittedModel& model, const Eigen::MatrixXd& features);

nlohmann::json model_to_json(const FittedModel& model);

/// Per-fold train/test matrices cut once from a fixed plan; reused for every label vector.
class CrossFitter {
public:
  CrossFitter(const Eigen::MatrixXd& features, const FoldPlan& plan);

  /// Out-of-sample prediction for every unit. Folds whose training part has fewer than two
  /// units of either class predict `baseline` for their held-out units.
  Eigen::VectorXd predict(const Labels& labels, const LearnerSpec& spec,
                          std::span<const double> baseline, double epsilon = 1e-6,
                          std::size_t* degraded_folds = nullptr) const;

  /// Fitted per-fold models for `labels` (diagnostic dumps, unsafe reuse mode).
  std::vector<FittedModel> fit_folds(const Labels& labels, const LearnerSpec& spec,
                                     double epsilon = 1e-6) const;

  const FoldPlan& plan() const { return plan_; }
  std::size_t n() const { return plan_.n(); }

private:
  struct Fold {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
    Eigen::MatrixXd train_x;
    Eigen::MatrixXd test_x;
  };
  FoldPlan plan_;
  std::vector<Fold> folds_;
};

Eigen::VectorXd cross_fit_predictions(const UnitTable& units, const Labels& labels, const FoldPlan& plan,
                                      const LearnerSpec& spec, std::span<const double> baseline,
                                      double epsilon = 1e-6);

}  // namespace raudit
