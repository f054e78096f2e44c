#pragma once

#include <cstdint>
#include <limits>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "raudit/design.hpp"
#include "raudit/units.hpp"

namespace raudit {

struct NoSignal {
  bool operator==(const NoSignal&) const = default;
};
/// Treatment log-odds tilted by coefficients . phi (coefficients may be shorter than d).
struct LinearSignal {
  std::vector<double> coefficients;
  bool operator==(const LinearSignal&) const = default;
};
/// Units above `cutoff` on feature `feature` are favoured.
struct ThresholdSignal {
  std::size_t feature = 0;
  double cutoff = 0.0;
  bool operator==(const ThresholdSignal&) const = default;
};
/// Feature space carved into `groups` Voronoi cells around seeded centers; cell 0 is
/// favoured (administrative-boundary style targeting).
struct ClusterBoundarySignal {
  std::size_t groups = 2;
  bool operator==(const ClusterBoundarySignal&) const = default;
};

using SignalSpec = std::variant<NoSignal, LinearSignal, ThresholdSignal, ClusterBoundarySignal>;

struct SyntheticScenario {
  std::size_t n = 100;
  std::size_t d = 2;
  SignalSpec signal = NoSignal{};
  /// Multiplies the signal on the log-odds scale; +infinity gives deterministic targeting.
  double strength = 1.0;
  Design design{CompleteDesign{50}, "synthetic"};
  double noise_scale = 1.0;
  /// Weight of the smooth spatial field added to features (0 disables it).
  double spatial_scale = 0.0;
  std::size_t spatial_bumps = 5;
  /// Number of clusters for cluster designs (units assigned round-robin).
  std::size_t clusters = 0;
  std::uint64_t seed = 0;
};

/// Feature draws, locations and block/cluster structure for a scenario (no labels).
UnitTable synthetic_features(const SyntheticScenario& scenario);

/// Full synthetic dataset: features plus a treatment column. Under NoSignal the treatment
/// is an exact draw from the design. Otherwise per-entity probabilities
/// sigma(logit(q) + strength * signal) are conditioned on the design's counts (the law of
/// rejection sampling until the counts match, sampled exactly). Throws InputError when
/// the counts are unreachable.
UnitTable generate_synthetic(const SyntheticScenario& scenario);

/// Draws binary labels from independent probabilities `p` conditioned on exactly
/// `count` ones. Returns nullopt if no such vector has positive probability.
std::optional<Labels> conditional_bernoulli(const std::vector<double>& p, std::size_t count,
                                            std::uint64_t seed);

/// Latent Voronoi group of each row (used by ClusterBoundarySignal).
std::vector<std::size_t> latent_groups(const Eigen::MatrixXd& features, std::size_t groups,
                                       std::uint64_t seed);

nlohmann::json scenario_to_json(const SyntheticScenario& scenario);
SyntheticScenario scenario_from_json(const nlohmann::json& doc);

}  // namespace raudit
