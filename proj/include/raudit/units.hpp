#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

namespace raudit {

/// Binary labels aligned to unit order (treatment, enrollment, response indicators).
using Labels = std::vector<std::uint8_t>;

struct Location {
  double lat = 0.0;
  double lon = 0.0;
  bool operator==(const Location&) const = default;
};

struct ResponseColumn {
  std::string name;
  Labels observed;
  bool operator==(const ResponseColumn&) const = default;
};

/// Units with pre-treatment features and whichever labels the input carried.
/// Absent optional columns stay absent; nothing is imputed.
struct UnitTable {
  std::vector<std::string> ids;
  std::optional<std::vector<std::string>> blocks;
  std::optional<std::vector<std::string>> clusters;
  std::optional<std::vector<Location>> locations;
  std::vector<std::string> feature_names;
  Eigen::MatrixXd features;  // n x d, row i is unit i
  std::optional<Labels> treated;
  std::optional<Labels> selected;
  std::vector<ResponseColumn> responses;

  std::size_t n() const { return ids.size(); }
  std::size_t d() const { return static_cast<std::size_t>(features.cols()); }

  bool operator==(const UnitTable& other) const;
};

/// Binds named input columns to roles.
struct ColumnMapping {
  std::string id = "unit_id";
  std::optional<std::string> block;
  std::optional<std::string> cluster;
  std::optional<std::string> lat;
  std::optional<std::string> lon;
  std::vector<std::string> features;
  std::optional<std::string> treated;
  std::optional<std::string> selected;
  std::vector<std::string> responses;
};

/// Checks the table invariants (shape, unique ids, finite features, binary labels).
/// Throws InputError listing every problem found.
void check_table(const UnitTable& units);

/// Parses comma-separated text with a header row. `source` names the input in diagnostics.
UnitTable parse_units(std::string_view text, const ColumnMapping& mapping,
                      std::string_view source = "<memory>");
UnitTable load_units(const std::filesystem::path& path, const ColumnMapping& mapping);

/// Canonical column names used by format_units; loading its output with this mapping
/// reproduces the table bit-for-bit.
ColumnMapping canonical_mapping(const UnitTable& units);
std::string format_units(const UnitTable& units);
void write_units(const UnitTable& units, const std::filesystem::path& path);

/// Hex SHA-256 over (n, d as little-endian u64, then features row-major as IEEE-754 doubles).
std::string feature_hash(const UnitTable& units);

/// Lowercase hex SHA-256 of arbitrary bytes.
std::string sha256_hex(std::string_view data);

/// JSON sidecar written next to ingested or emitted data.
nlohmann::json ingestion_sidecar(const UnitTable& units, const ColumnMapping& mapping,
                                 std::string_view source, std::string_view provenance);

struct Standardized {
  UnitTable units;
  std::vector<double> means;
  std::vector<double> sds;
  std::vector<std::size_t> constant_columns;
};

/// Centers each feature column and scales it to unit population SD. Constant columns
/// are set to 0 and listed in `constant_columns`.
Standardized standardize_features(const UnitTable& units);

/// One row per distinct cluster (first-appearance order): features averaged, block and
/// labels carried over. Throws InputError if a cluster mixes blocks or observed labels.
UnitTable aggregate_by_cluster(const UnitTable& units);

/// Row indices of each distinct cluster, in the same order as aggregate_by_cluster.
std::vector<std::vector<std::size_t>> cluster_members(const UnitTable& units);

/// Subset of rows, in the given order.
UnitTable select_rows(const UnitTable& units, const std::vector<std::size_t>& rows);

}  // namespace raudit
