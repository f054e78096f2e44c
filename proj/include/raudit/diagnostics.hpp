#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "raudit/crt.hpp"
#include "raudit/learners.hpp"
#include "raudit/units.hpp"

namespace raudit {

/// Literal tag carried by every selection/missingness output.
inline constexpr const char* kDescriptiveLabel = "descriptive diagnostic (no registered mechanism)";

enum class ReferenceMechanism { permute, redraw };

struct DiagnosticOptions {
  ReferenceMechanism reference = ReferenceMechanism::permute;
  double epsilon = kDefaultEpsilon;
  std::size_t workers = 1;
};

/// Enrolled and frame units in one table; `units.selected` is S.
struct SelectionFrame {
  UnitTable units;
  std::string description;
};

/// Stacks enrolled units (S=1) on frame units (S=0). Feature names must agree.
SelectionFrame make_selection_frame(const UnitTable& enrolled, const UnitTable& frame, std::string description);

struct DiagnosticVariable {
  std::string name;
  bool skipped = false;
  std::string notice;
  double marginal_rate = 0.0;
  ScoreResult observed;
  double raw_p = 1.0;
  double adjusted_p = 1.0;  // max-T across the audited variables
  std::vector<double> null_statistics;
  double null_mean = 0.0;
  double null_se = 0.0;
  Histogram histogram;
  std::vector<double> fitted;  // cross-fitted probabilities for the observed labels
};

struct DiagnosticReport {
  std::string label = kDescriptiveLabel;
  std::string kind;  // "selection" or "missingness"
  std::string description;
  std::string reference;
  LearnerSpec spec;
  FoldPlan folds;
  std::size_t resamples = 0;
  std::uint64_t seed = 0;
  double epsilon = kDefaultEpsilon;
  std::vector<DiagnosticVariable> variables;
  std::vector<std::string> notices;
};

/// Labels for reference draw `draw` of variable `variable`. Permutation shuffles rows with a
/// permutation shared by all variables of the draw; redraw samples Bernoulli at the observed rate.
Labels reference_labels(const Labels& observed, ReferenceMechanism mechanism, std::uint64_t seed, std::size_t draw,
                        std::size_t variable);

/// Out-of-sample likelihood improvement of predicting S from features over the marginal
/// enrollment rate, referenced against permuted (or redrawn) S with refitting.
DiagnosticReport selection_audit(const SelectionFrame& frame, const LearnerSpec& spec, const FoldPlan& plan,
                                 std::size_t resamples, std::uint64_t seed, const DiagnosticOptions& options = {});

/// One response model per column of `units.responses`, all referenced against the same
/// row permutations so the max-T adjustment across variables is valid. Columns without
/// variation are skipped with a notice.
DiagnosticReport missingness_audit(const UnitTable& units, const LearnerSpec& spec, const FoldPlan& plan,
                                   std::size_t resamples, std::uint64_t seed, const DiagnosticOptions& options = {});

nlohmann::json diagnostic_to_json(const DiagnosticReport& report);

struct WeightTable {
  double floor = 0.01;
  std::vector<std::string> names;
  std::vector<std::vector<double>> weights;  // weights[j][i]
};

/// w_ij = R_ij / max(rho_ij, floor); zero where the variable is missing.
WeightTable ipw_weights(const std::vector<ResponseColumn>& responses, const std::vector<std::vector<double>>& rho_hat,
                        double floor = 0.01);

std::string weight_table_csv(const WeightTable& table, const std::vector<std::string>& unit_ids);
nlohmann::json weight_table_to_json(const WeightTable& table);

}  // namespace raudit
