#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "raudit/units.hpp"

namespace raudit {

struct Design;

struct BernoulliDesign {
  double rate = 0.5;
  bool operator==(const BernoulliDesign&) const = default;
};

/// Exactly m of n units treated, every size-m subset equally likely.
struct CompleteDesign {
  std::int64_t m = 0;
  bool operator==(const CompleteDesign&) const = default;
};

/// Complete randomization run independently inside each block.
struct StratifiedDesign {
  std::map<std::string, std::int64_t> per_block;
  bool operator==(const StratifiedDesign&) const = default;
};

/// The inner design randomizes whole clusters; units inherit their cluster's label.
struct ClusterDesign {
  std::shared_ptr<const Design> inner;
  bool operator==(const ClusterDesign& other) const;
};

/// The registered randomization mechanism.
struct Design {
  std::variant<BernoulliDesign, CompleteDesign, StratifiedDesign, ClusterDesign> variant;
  std::string label;
  bool operator==(const Design&) const = default;
};

Design make_cluster_design(Design inner, std::string label = {});

/// Current version of the design JSON document.
inline constexpr int kDesignSchemaVersion = 1;

/// {"schema_version":1, "variant":"complete"|"bernoulli"|"stratified"|"cluster",
///  "m"|"rate"|"per_block"|"inner": ..., "label": "..."}
nlohmann::json design_to_json(const Design& design);
Design design_from_json(const nlohmann::json& doc);  // throws InputError

std::string describe(const Design& design);

struct AssignmentVector {
  Labels values;
  std::optional<std::uint64_t> seed;  // absent for the observed assignment
  bool operator==(const AssignmentVector&) const = default;
};

struct Violation {
  std::string where;  // block or cluster id, or the design field at fault
  std::string message;
};

std::vector<Violation> validate_design(const Design& design, const UnitTable& units);

struct BaselineProbabilities {
  std::vector<double> q;
  std::vector<std::size_t> degenerate;  // units with q in {0, 1}
};

struct WeightedAssignment {
  Labels values;
  double probability = 0.0;
};

struct TooLarge {
  double count = 0.0;  // total number of assignments (may be approximate when huge)
};

using Enumeration = std::variant<std::vector<WeightedAssignment>, TooLarge>;

/// A design bound to a specific unit table: strata resolved to row indices, cluster
/// membership expanded. Construction validates; all members are const and thread-safe.
class BoundDesign {
public:
  /// Throws DesignError listing every violation.
  BoundDesign(const Design& design, const UnitTable& units);

  std::size_t size() const { return units_; }
  const Design& design() const { return design_; }

  AssignmentVector draw(std::uint64_t seed) const;
  BaselineProbabilities baseline() const;

  /// Empty string when the blockwise complement preserves the design; otherwise a
  /// description naming the first offending block.
  std::string complement_blocker() const;
  std::optional<AssignmentVector> complement(const AssignmentVector& a) const;

  /// Every violated count or cluster constraint for `values`.
  std::vector<Violation> check(const Labels& values) const;

  Enumeration enumerate(std::size_t cap) const;

private:
  enum class Rule { bernoulli, fixed_count };
  struct Stratum {
    std::string name;
    std::vector<std::size_t> members;  // entity indices
    Rule rule = Rule::fixed_count;
    double rate = 0.0;
    std::size_t treated = 0;
  };

  Labels expand(const Labels& entity_labels) const;
  std::optional<Labels> collapse(const Labels& unit_labels) const;

  Design design_;
  std::size_t units_ = 0;
  std::size_t entities_ = 0;
  std::vector<Stratum> strata_;
  std::vector<std::size_t> entity_of_unit_;  // empty unless clustered
};

AssignmentVector draw_assignment(const Design& design, const UnitTable& units,
                                 std::uint64_t seed);
BaselineProbabilities baseline_probabilities(const Design& design, const UnitTable& units);
std::optional<AssignmentVector> antithetic_complement(const Design& design,
                                                      const UnitTable& units,
                                                      const AssignmentVector& a);
Enumeration enumerate_assignments(const Design& design, const UnitTable& units,
                                  std::size_t cap);

}  // namespace raudit
