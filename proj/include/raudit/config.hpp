#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "raudit/crt.hpp"
#include "raudit/design.hpp"
#include "raudit/diagnostics.hpp"
#include "raudit/learners.hpp"
#include "raudit/synthetic.hpp"
#include "raudit/units.hpp"

namespace raudit {

inline constexpr const char* kConfigSchema = "raudit.config/1";

struct DataSource {
  std::filesystem::path path;
  ColumnMapping columns;
};

struct FrameSource {
  std::filesystem::path path;
  std::string description;
};

struct PowerConfig {
  SyntheticScenario scenario;
  std::vector<double> effects;
  std::size_t replications = 0;
};

/// One audit configuration: the single preregistration document. Optional fields stay
/// unset when absent so `validate` can report exactly what is missing.
struct AuditConfig {
  std::filesystem::path base_dir;
  nlohmann::json document;  // as parsed, before overrides
  std::optional<Design> design;
  std::vector<LearnerSpec> learners;
  std::optional<std::size_t> folds;
  std::uint64_t fold_seed = 0;
  bool stratify = true;
  std::optional<std::size_t> resamples;
  std::optional<std::uint64_t> master_seed;
  bool antithetic = false;
  ScoreKind score = ScoreKind::log;
  double epsilon = kDefaultEpsilon;
  std::optional<std::string> multiplicity;  // max-t | bonferroni | bh | none
  double alpha = 0.05;
  bool standardize = true;
  bool expand_clusters = false;
  bool unsafe_reuse_observed_model = false;
  std::size_t workers = 1;
  std::optional<DataSource> data;
  std::optional<FrameSource> frame;
  std::optional<std::filesystem::path> output_dir;
  ReferenceMechanism reference = ReferenceMechanism::permute;
  double ipw_floor = 0.01;
  std::optional<PowerConfig> power;
  nlohmann::json provenance = nlohmann::json::object();
  nlohmann::json overrides = nlohmann::json::object();
};

/// Throws InputError on malformed values; absent values are left unset.
AuditConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
AuditConfig load_config(const std::filesystem::path& path);

/// sha256 of the canonical (sorted-key) dump of the parsed document.
std::string config_hash(const AuditConfig& config);

/// Command-line overrides; only paths, seeds and worker count may be overridden.
struct Overrides {
  std::optional<std::filesystem::path> data;
  std::optional<std::filesystem::path> frame;
  std::optional<std::filesystem::path> output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

/// Applies overrides and records each one in `config.overrides`.
void apply_overrides(AuditConfig& config, const Overrides& overrides);

std::filesystem::path resolve(const AuditConfig& config, const std::filesystem::path& p);

bool is_valid_multiplicity(const std::string& rule);

}  // namespace raudit
