#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "raudit/design.hpp"
#include "raudit/learners.hpp"
#include "raudit/scoring.hpp"
#include "raudit/synthetic.hpp"
#include "raudit/units.hpp"

namespace raudit {

inline constexpr const char* kEngineVersion = "1.0.0";
inline constexpr const char* kReportSchema = "raudit.report/1";
inline constexpr std::size_t kMinResamples = 19;
inline constexpr std::size_t kDefaultResamples = 1000;

struct CrtOptions {
  std::size_t resamples = kDefaultResamples;
  std::uint64_t master_seed = 0;
  bool antithetic = false;
  ScoreKind score_kind = ScoreKind::log;
  double epsilon = kDefaultEpsilon;
  std::size_t workers = 1;
  /// Scores every resample with the models fitted on the observed assignment instead of
  /// refitting. Breaks exchangeability; p-values from this mode carry no validity guarantee.
  bool unsafe_reuse_observed_model = false;
};

/// Binned null sample (Freedman-Diaconis) plus the observed-statistic marker.
struct Histogram {
  std::string rule;
  std::vector<double> edges;  // counts.size() + 1 entries
  std::vector<std::size_t> counts;
  double observed = 0.0;
  bool operator==(const Histogram&) const = default;
};

Histogram null_histogram(std::span<const double> sample, double observed);

struct NullDistribution {
  std::string model_id;
  std::vector<double> statistics;
  bool antithetic = false;
  double elapsed_seconds = 0.0;  // wall time of the whole resampling run; not serialized
  bool operator==(const NullDistribution& o) const {
    return model_id == o.model_id && statistics == o.statistics && antithetic == o.antithetic;
  }
};

struct ModelResult {
  LearnerSpec spec;
  ScoreResult observed;
  std::size_t observed_degraded_folds = 0;
  NullDistribution null;
  double raw_p = 1.0;
  double p_max_t = 1.0;
  double p_bonferroni = 1.0;
  double p_bh = 1.0;
  double null_mean = 0.0;
  double null_sd = 0.0;
  double null_se = 0.0;  // Monte Carlo standard error of null_mean
  Histogram histogram;
  bool operator==(const ModelResult&) const = default;
};

struct AuditReport {
  std::string schema = kReportSchema;
  std::string engine_version = kEngineVersion;
  std::string config_hash;
  std::string feature_hash;
  std::uint64_t master_seed = 0;
  Design design;
  std::string analysis_unit = "unit";
  FoldPlan folds;
  std::size_t resamples = 0;
  bool antithetic = false;
  ScoreKind score_kind = ScoreKind::log;
  double epsilon = kDefaultEpsilon;
  bool unsafe_reuse_observed_model = false;
  std::vector<std::string> degenerate_units;
  std::vector<std::uint64_t> resample_seeds;
  std::vector<std::uint8_t> resample_is_complement;
  std::vector<ModelResult> models;
  std::string multiplicity = "max-t";
  double alpha = 0.05;
  std::vector<std::string> notes;
  nlohmann::json provenance = nlohmann::json::object();
  nlohmann::json overrides = nlohmann::json::object();
  bool operator==(const AuditReport&) const = default;
};

nlohmann::json report_to_json(const AuditReport& report);
AuditReport report_from_json(const nlohmann::json& doc);

/// Flat table of every resampled statistic: resample,seed,complement,<model ids...>.
std::string null_statistics_csv(const AuditReport& report);

/// p = (1 + #{nulls >= observed}) / (B + 1).
double p_value(double observed, std::span<const double> nulls);

/// Westfall-Young single-step max-T. `nulls[b][m]` is model m's statistic on resample b.
std::vector<double> max_t_adjust(std::span<const double> observed, const std::vector<std::vector<double>>& nulls);
std::vector<double> bonferroni_adjust(std::span<const double> raw);
std::vector<double> bh_adjust(std::span<const double> raw);

/// Conditional randomization test: refits every spec on each fresh design draw under the
/// fixed fold plan and train seeds. `units` must carry the observed treatment column.
AuditReport run_crt(const UnitTable& units, const Design& design, const std::vector<LearnerSpec>& specs,
                    const FoldPlan& plan, const CrtOptions& options);

/// Table the statistic is computed on, plus the design to resample it with. Cluster designs
/// collapse to one row per cluster by default; `expand_clusters` keeps unit rows.
struct AnalysisFrame {
  UnitTable table;
  Design design;
  std::string analysis_unit;
  std::vector<std::string> notes;
};
AnalysisFrame prepare_analysis(const UnitTable& units, const Design& design, bool expand_clusters = false);

/// Fold plan matching the frame: clusters kept intact when unit rows are expanded.
FoldPlan plan_for_frame(const AnalysisFrame& frame, std::size_t k, std::uint64_t seed, bool stratify);

struct ExactCrt {
  double p = 1.0;
  double total = 0.0;  // number of assignments with positive probability
  std::vector<double> statistics;
  std::vector<double> probabilities;
  double observed = 0.0;
};

/// Exhaustive counterpart of run_crt: exact tail probability P(T(a) >= T(A_obs)) over all
/// assignments of the design. Throws EngineError when the design exceeds `cap`.
ExactCrt enumerated_crt(const UnitTable& units, const Design& design, const LearnerSpec& spec, const FoldPlan& plan,
                        const CrtOptions& options = {}, std::size_t cap = 100000);

/// Everything a run needs apart from the data: learners, folds and resampling options.
struct AuditSettings {
  std::vector<LearnerSpec> specs{LearnerSpec{}};
  std::size_t folds = 5;
  std::uint64_t fold_seed = 0;
  bool stratify = true;
  bool standardize = true;
  bool expand_clusters = false;
  CrtOptions crt;
};

struct ReplicationRecord {
  std::uint64_t seed = 0;
  double observed = 0.0;   // first model's observed statistic
  double raw_p = 1.0;      // first model
  double family_p = 1.0;   // smallest max-T adjusted p across models
  double null_mean = 0.0;  // first model
  double null_se = 0.0;
};

struct PowerPoint {
  double effect = 0.0;
  double rejection_rate = 0.0;
  double standard_error = 0.0;
  std::size_t replications = 0;
  std::vector<ReplicationRecord> records;
};

struct PowerCurve {
  double alpha = 0.05;
  std::vector<PowerPoint> points;
};

/// For each effect size (the scenario's signal strength), runs `replications` synthetic
/// audits with distinct seeds and reports the share with family p <= alpha. Replications run
/// in parallel over `settings.crt.workers`; each audit itself is single-threaded.
PowerCurve simulate_power(const SyntheticScenario& scenario, const AuditSettings& settings,
                          const std::vector<double>& effects, std::size_t replications, double alpha,
                          std::uint64_t master_seed);

/// One synthetic audit end to end (generate, standardize, fold, run_crt).
AuditReport run_synthetic_audit(const SyntheticScenario& scenario, const AuditSettings& settings);

nlohmann::json power_curve_to_json(const PowerCurve& curve);
std::string power_curve_csv(const PowerCurve& curve);

}  // namespace raudit
