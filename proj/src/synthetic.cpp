#include "raudit/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "raudit/error.hpp"
#include "raudit/rng.hpp"

namespace raudit {
namespace {

// Sub-stream tags under the scenario seed.
constexpr std::uint64_t kFeatureStream = 1;
constexpr std::uint64_t kAssignStream = 2;
constexpr std::uint64_t kGroupStream = 3;

std::string padded(const char* prefix, std::size_t i, std::size_t count) {
  const int width = static_cast<int>(std::to_string(count).size());
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%0*zu", prefix, width, i + 1);
  return buf;
}

void check_scenario(const SyntheticScenario& s) {
  if (s.n < 4) throw InputError("scenario: n must be at least 4");
  if (s.d < 1) throw InputError("scenario: d must be at least 1");
  if (!(s.noise_scale >= 0.0)) throw InputError("scenario: noise_scale must be non-negative");
  if (!(s.strength >= 0.0)) throw InputError("scenario: strength must be non-negative");
  if (const auto* lin = std::get_if<LinearSignal>(&s.signal); lin && lin->coefficients.size() > s.d)
    throw InputError("scenario: more coefficients than features");
  if (const auto* thr = std::get_if<ThresholdSignal>(&s.signal); thr && thr->feature >= s.d)
    throw InputError("scenario: threshold feature index out of range");
  if (const auto* cb = std::get_if<ClusterBoundarySignal>(&s.signal); cb && cb->groups < 2)
    throw InputError("scenario: cluster-boundary needs at least 2 groups");
  if (std::holds_alternative<ClusterDesign>(s.design.variant) && s.clusters < 2)
    throw InputError("scenario: cluster designs need clusters >= 2");
}

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

double tilted(double q, double strength, double signal) {
  if (q <= 0.0 || q >= 1.0 || signal == 0.0 || strength == 0.0) return q;
  if (std::isinf(strength)) return signal > 0 ? 1.0 : 0.0;
  return sigmoid(std::log(q / (1.0 - q)) + strength * signal);
}

}  // namespace

std::vector<std::size_t> latent_groups(const Eigen::MatrixXd& features, std::size_t groups,
                                       std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(features.rows());
  if (groups < 1 || groups > n) throw InputError("latent_groups: need 1 <= groups <= n");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  CounterRng rng(seed);
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::size_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < groups; ++g) {
      const double dist = (features.row(static_cast<Eigen::Index>(i)) -
                           features.row(static_cast<Eigen::Index>(order[g])))
                              .squaredNorm();
      if (dist < best) {
        best = dist;
        out[i] = g;
      }
    }
  }
  return out;
}

std::optional<Labels> conditional_bernoulli(const std::vector<double>& p, std::size_t count,
                                            std::uint64_t seed) {
  const std::size_t n = p.size();
  if (count > n) return std::nullopt;
  // tail[i][k] is proportional to P(sum of draws i..n-1 == k); rows rescaled to avoid underflow.
  std::vector<std::vector<double>> tail(n + 1, std::vector<double>(count + 1, 0.0));
  tail[n][0] = 1.0;
  for (std::size_t i = n; i-- > 0;) {
    double peak = 0.0;
    for (std::size_t k = 0; k <= count; ++k) {
      double v = (1.0 - p[i]) * tail[i + 1][k];
      if (k > 0) v += p[i] * tail[i + 1][k - 1];
      tail[i][k] = v;
      peak = std::max(peak, v);
    }
    if (peak > 0.0)
      for (auto& v : tail[i]) v /= peak;
  }
  if (!(tail[0][count] > 0.0)) return std::nullopt;

  CounterRng rng(seed);
  Labels out(n, 0);
  std::size_t need = count;
  for (std::size_t i = 0; i < n && need > 0; ++i) {
    const double take = p[i] * tail[i + 1][need - 1];
    const double skip = (1.0 - p[i]) * tail[i + 1][need];
    const double u = rng.uniform01();
    if (take > 0.0 && (skip <= 0.0 || u * (take + skip) < take)) {
      out[i] = 1;
      --need;
    }
  }
  if (need != 0) return std::nullopt;
  return out;
}

UnitTable synthetic_features(const SyntheticScenario& s) {
  check_scenario(s);
  CounterRng rng(stable_hash(s.seed, kFeatureStream));
  UnitTable units;
  for (std::size_t i = 0; i < s.n; ++i) units.ids.push_back(padded("u", i, s.n));
  for (std::size_t j = 0; j < s.d; ++j) units.feature_names.push_back("f" + std::to_string(j + 1));

  auto& locations = units.locations.emplace();
  for (std::size_t i = 0; i < s.n; ++i) locations.push_back({rng.uniform01(), 30.0 + rng.uniform01()});

  const auto n = static_cast<Eigen::Index>(s.n);
  const auto d = static_cast<Eigen::Index>(s.d);
  units.features.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) units.features(i, j) = s.noise_scale * rng.normal();

  if (s.spatial_scale != 0.0 && s.spatial_bumps > 0) {
    constexpr double bandwidth = 0.25;
    for (std::size_t k = 0; k < s.spatial_bumps; ++k) {
      const Location center{rng.uniform01(), 30.0 + rng.uniform01()};
      Eigen::RowVectorXd amplitude(d);
      for (Eigen::Index j = 0; j < d; ++j) amplitude(j) = rng.normal();
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto& loc = locations[static_cast<std::size_t>(i)];
        const double r2 = (loc.lat - center.lat) * (loc.lat - center.lat) +
                          (loc.lon - center.lon) * (loc.lon - center.lon);
        units.features.row(i) += s.spatial_scale * std::exp(-r2 / (2 * bandwidth * bandwidth)) * amplitude;
      }
    }
  }

  const Design* level = &s.design;
  if (const auto* cluster = std::get_if<ClusterDesign>(&s.design.variant)) {
    auto& clusters = units.clusters.emplace();
    for (std::size_t i = 0; i < s.n; ++i) clusters.push_back(padded("c", i % s.clusters, s.clusters));
    level = cluster->inner.get();
  }
  if (const auto* strat = std::get_if<StratifiedDesign>(&level->variant)) {
    std::vector<std::string> keys;
    for (const auto& kv : strat->per_block) keys.push_back(kv.first);
    if (keys.empty()) throw InputError("scenario: stratified design lists no blocks");
    auto& blocks = units.blocks.emplace();
    for (std::size_t i = 0; i < s.n; ++i) {
      const std::size_t slot = units.clusters ? i % s.clusters : i;
      blocks.push_back(keys[slot % keys.size()]);
    }
  }
  return units;
}

UnitTable generate_synthetic(const SyntheticScenario& s) {
  UnitTable units = synthetic_features(s);
  const BoundDesign bound(s.design, units);
  const std::uint64_t assign_seed = stable_hash(s.seed, kAssignStream);
  if (std::holds_alternative<NoSignal>(s.signal)) {
    units.treated = bound.draw(assign_seed).values;
    return units;
  }

  // Targeting acts on the randomized entity (cluster or unit).
  const bool clustered = std::holds_alternative<ClusterDesign>(s.design.variant);
  const Design& level = clustered ? *std::get<ClusterDesign>(s.design.variant).inner : s.design;
  const UnitTable entities = clustered ? aggregate_by_cluster(units) : units;
  const auto q = baseline_probabilities(level, entities).q;
  const std::size_t m = entities.n();

  std::vector<double> signal(m, 0.0);
  std::visit(
      [&](const auto& sig) {
        using T = std::decay_t<decltype(sig)>;
        if constexpr (std::is_same_v<T, LinearSignal>) {
          for (std::size_t e = 0; e < m; ++e)
            for (std::size_t j = 0; j < sig.coefficients.size(); ++j)
              signal[e] += sig.coefficients[j] *
                           entities.features(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(j));
        } else if constexpr (std::is_same_v<T, ThresholdSignal>) {
          for (std::size_t e = 0; e < m; ++e)
            signal[e] = entities.features(static_cast<Eigen::Index>(e), static_cast<Eigen::Index>(sig.feature)) >
                                sig.cutoff
                            ? 1.0
                            : -1.0;
        } else if constexpr (std::is_same_v<T, ClusterBoundarySignal>) {
          if (sig.groups > m) throw InputError("scenario: more latent groups than randomized entities");
          const auto groups = latent_groups(entities.features, sig.groups, stable_hash(s.seed, kGroupStream));
          for (std::size_t e = 0; e < m; ++e) signal[e] = groups[e] == 0 ? 1.0 : -1.0;
        }
      },
      s.signal);

  std::vector<double> p(m);
  for (std::size_t e = 0; e < m; ++e) p[e] = tilted(q[e], s.strength, signal[e]);

  Labels entity_labels(m, 0);
  CounterRng rng(assign_seed);
  auto fixed_count = [&](const std::vector<std::size_t>& members, std::size_t count, const std::string& where) {
    std::vector<double> sub;
    for (auto e : members) sub.push_back(p[e]);
    auto drawn = conditional_bernoulli(sub, count, rng());
    if (!drawn)
      throw InputError("scenario: signal makes the required count " + std::to_string(count) + " in " + where +
                       " unreachable");
    for (std::size_t k = 0; k < members.size(); ++k) entity_labels[members[k]] = (*drawn)[k];
  };
  std::vector<std::size_t> all(m);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, BernoulliDesign>) {
          for (std::size_t e = 0; e < m; ++e) entity_labels[e] = rng.bernoulli(p[e]) ? 1 : 0;
        } else if constexpr (std::is_same_v<T, CompleteDesign>) {
          fixed_count(all, static_cast<std::size_t>(v.m), "the full sample");
        } else if constexpr (std::is_same_v<T, StratifiedDesign>) {
          for (const auto& [block, mb] : v.per_block) {
            std::vector<std::size_t> members;
            for (std::size_t e = 0; e < m; ++e)
              if ((*entities.blocks)[e] == block) members.push_back(e);
            if (!members.empty()) fixed_count(members, static_cast<std::size_t>(mb), "block '" + block + "'");
          }
        }
      },
      level.variant);

  Labels treated(units.n());
  if (clustered) {
    const auto members = cluster_members(units);
    for (std::size_t c = 0; c < members.size(); ++c)
      for (auto i : members[c]) treated[i] = entity_labels[c];
  } else {
    treated = entity_labels;
  }
  units.treated = std::move(treated);
  return units;
}

nlohmann::json scenario_to_json(const SyntheticScenario& s) {
  nlohmann::json signal;
  std::visit(
      [&](const auto& sig) {
        using T = std::decay_t<decltype(sig)>;
        if constexpr (std::is_same_v<T, NoSignal>) {
          signal = {{"kind", "none"}};
        } else if constexpr (std::is_same_v<T, LinearSignal>) {
          signal = {{"kind", "linear"}, {"coefficients", sig.coefficients}};
        } else if constexpr (std::is_same_v<T, ThresholdSignal>) {
          signal = {{"kind", "threshold"}, {"feature", sig.feature}, {"cutoff", sig.cutoff}};
        } else {
          signal = {{"kind", "cluster_boundary"}, {"groups", sig.groups}};
        }
      },
      s.signal);
  return {{"n", s.n},
          {"d", s.d},
          {"signal", signal},
          {"strength", std::isinf(s.strength) ? nlohmann::json("inf") : nlohmann::json(s.strength)},
          {"design", design_to_json(s.design)},
          {"noise_scale", s.noise_scale},
          {"spatial_scale", s.spatial_scale},
          {"spatial_bumps", s.spatial_bumps},
          {"clusters", s.clusters},
          {"seed", s.seed}};
}

SyntheticScenario scenario_from_json(const nlohmann::json& doc) {
  SyntheticScenario s;
  try {
    s.n = doc.value("n", s.n);
    s.d = doc.value("d", s.d);
    if (doc.contains("strength")) {
      const auto& st = doc["strength"];
      s.strength = st.is_string() && st.get<std::string>() == "inf" ? std::numeric_limits<double>::infinity()
                                                                    : st.get<double>();
    }
    if (doc.contains("design")) s.design = design_from_json(doc["design"]);
    s.noise_scale = doc.value("noise_scale", s.noise_scale);
    s.spatial_scale = doc.value("spatial_scale", s.spatial_scale);
    s.spatial_bumps = doc.value("spatial_bumps", s.spatial_bumps);
    s.clusters = doc.value("clusters", s.clusters);
    s.seed = doc.value("seed", s.seed);
    if (doc.contains("signal")) {
      const auto& sig = doc["signal"];
      const auto kind = sig.value("kind", std::string("none"));
      if (kind == "none") s.signal = NoSignal{};
      else if (kind == "linear") s.signal = LinearSignal{sig.at("coefficients").get<std::vector<double>>()};
      else if (kind == "threshold")
        s.signal = ThresholdSignal{sig.value("feature", std::size_t{0}), sig.value("cutoff", 0.0)};
      else if (kind == "cluster_boundary") s.signal = ClusterBoundarySignal{sig.value("groups", std::size_t{2})};
      else throw InputError("scenario: unknown signal kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("scenario: malformed field: ") + e.what());
  }
  check_scenario(s);
  return s;
}

}  // namespace raudit
