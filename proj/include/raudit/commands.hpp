#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "raudit/config.hpp"
#include "raudit/crt.hpp"
#include "raudit/diagnostics.hpp"

namespace raudit {

struct ChecklistRow {
  std::string item;
  std::string value;  // empty when missing
  bool required = false;
  bool bound() const { return !value.empty(); }
};

struct ValidationResult {
  std::vector<ChecklistRow> rows;
  bool ok = true;  // every required row bound
  std::string text;
};

/// Preregistration checklist bound to a configuration.
ValidationResult checklist(const AuditConfig& config);
ValidationResult cmd_validate(const std::filesystem::path& config_path);

struct AuditOutputs {
  AuditReport report;
  std::string summary;
  std::filesystem::path report_path;
  std::filesystem::path nulls_path;
  std::filesystem::path summary_path;
};

/// Runs the randomization audit described by the config and writes
/// audit_report.json, audit_nulls.csv and audit_summary.txt into the output directory.
AuditOutputs cmd_audit(const std::filesystem::path& config_path, const Overrides& overrides = {});
AuditOutputs run_audit(AuditConfig config);

struct DiagnosticOutputs {
  DiagnosticReport report;
  std::string summary;
  std::vector<std::filesystem::path> files;
};

DiagnosticOutputs cmd_selection(const std::filesystem::path& config_path, const Overrides& overrides = {});
DiagnosticOutputs cmd_missingness(const std::filesystem::path& config_path, const Overrides& overrides = {});

struct PowerOutputs {
  PowerCurve curve;
  std::vector<std::filesystem::path> files;
};

PowerOutputs cmd_power(const std::filesystem::path& config_path, const Overrides& overrides = {});

/// Builtin demo datasets with ready-to-run configs.
std::vector<std::string> builtin_scenarios();
std::vector<std::filesystem::path> cmd_synth(const std::string& scenario, std::uint64_t seed,
                                             const std::filesystem::path& out_dir);

}  // namespace raudit
