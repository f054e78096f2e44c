#include "raudit/design.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "raudit/error.hpp"
#include "raudit/rng.hpp"

namespace raudit {

bool ClusterDesign::operator==(const ClusterDesign& other) const {
  if (!inner || !other.inner) return inner == other.inner;
  return *inner == *other.inner;
}

Design make_cluster_design(Design inner, std::string label) {
  return Design{ClusterDesign{std::make_shared<const Design>(std::move(inner))}, std::move(label)};
}

// ---------------------------------------------------------------------------
// JSON

nlohmann::json design_to_json(const Design& design) {
  nlohmann::json j;
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, BernoulliDesign>) {
          j["variant"] = "bernoulli";
          j["rate"] = v.rate;
        } else if constexpr (std::is_same_v<T, CompleteDesign>) {
          j["variant"] = "complete";
          j["m"] = v.m;
        } else if constexpr (std::is_same_v<T, StratifiedDesign>) {
          j["variant"] = "stratified";
          j["per_block"] = v.per_block;
        } else {
          j["variant"] = "cluster";
          j["inner"] = design_to_json(*v.inner);
          j["inner"].erase("schema_version");
        }
      },
      design.variant);
  j["label"] = design.label;
  j["schema_version"] = kDesignSchemaVersion;
  return j;
}

Design design_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw InputError("design: expected a JSON object");
  if (doc.contains("schema_version") && doc["schema_version"] != kDesignSchemaVersion)
    throw InputError("design: unsupported schema_version " + doc["schema_version"].dump());
  if (!doc.contains("variant") || !doc["variant"].is_string())
    throw InputError("design: missing string field 'variant'");
  const auto variant = doc["variant"].get<std::string>();
  auto require = [&](const char* key) -> const nlohmann::json& {
    if (!doc.contains(key)) throw InputError("design variant '" + variant + "' requires field '" + key + "'");
    return doc[key];
  };
  Design out;
  out.label = doc.value("label", std::string{});
  try {
    if (variant == "bernoulli") {
      out.variant = BernoulliDesign{require("rate").get<double>()};
    } else if (variant == "complete") {
      out.variant = CompleteDesign{require("m").get<std::int64_t>()};
    } else if (variant == "stratified") {
      out.variant = StratifiedDesign{require("per_block").get<std::map<std::string, std::int64_t>>()};
    } else if (variant == "cluster") {
      out.variant = ClusterDesign{std::make_shared<const Design>(design_from_json(require("inner")))};
    } else {
      throw InputError("design: unknown variant '" + variant + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("design: malformed field for variant '" + variant + "': " + e.what());
  }
  return out;
}

std::string describe(const Design& design) {
  std::ostringstream os;
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, BernoulliDesign>) {
          os << "Bernoulli(rate=" << v.rate << ")";
        } else if constexpr (std::is_same_v<T, CompleteDesign>) {
          os << "CompleteFixedCount(m=" << v.m << ")";
        } else if constexpr (std::is_same_v<T, StratifiedDesign>) {
          os << "StratifiedFixedCounts(";
          bool first = true;
          for (const auto& [block, m] : v.per_block) {
            os << (first ? "" : ", ") << block << ":" << m;
            first = false;
          }
          os << ")";
        } else {
          os << "ClusterRandomized(" << describe(*v.inner) << ")";
        }
      },
      design.variant);
  return os.str();
}

// ---------------------------------------------------------------------------
// Validation

namespace {

struct BlockIndex {
  std::vector<std::string> names;  // sorted
  std::vector<std::vector<std::size_t>> members;
};

BlockIndex index_blocks(const std::vector<std::string>& blocks) {
  std::map<std::string, std::vector<std::size_t>> by;
  for (std::size_t i = 0; i < blocks.size(); ++i) by[blocks[i]].push_back(i);
  BlockIndex out;
  for (auto& [k, v] : by) {
    out.names.push_back(k);
    out.members.push_back(std::move(v));
  }
  return out;
}

std::vector<Violation> validate_unit_level(const Design& design, const UnitTable& units) {
  std::vector<Violation> out;
  const auto n = static_cast<std::int64_t>(units.n());
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, BernoulliDesign>) {
          if (!(v.rate > 0.0 && v.rate < 1.0))
            out.push_back({"rate", "Bernoulli rate must lie strictly in (0,1)"});
        } else if constexpr (std::is_same_v<T, CompleteDesign>) {
          if (v.m >= n)
            out.push_back({"m", "m >= n (m=" + std::to_string(v.m) + ", n=" + std::to_string(n) + ")"});
          if (v.m <= 0) out.push_back({"m", "m <= 0 (m=" + std::to_string(v.m) + ")"});
        } else if constexpr (std::is_same_v<T, StratifiedDesign>) {
          if (!units.blocks) {
            out.push_back({"blocks", "stratified design requires a block column"});
            return;
          }
          const auto index = index_blocks(*units.blocks);
          bool any_random = false;
          for (std::size_t b = 0; b < index.names.size(); ++b) {
            const auto& name = index.names[b];
            const auto nb = static_cast<std::int64_t>(index.members[b].size());
            if (name.empty()) {
              out.push_back({"", "units without a block id (" + std::to_string(nb) + " rows)"});
              continue;
            }
            auto it = v.per_block.find(name);
            if (it == v.per_block.end()) {
              out.push_back({name, "block '" + name + "' present in units has no entry in per_block"});
              continue;
            }
            if (it->second < 0 || it->second > nb)
              out.push_back({name, "block '" + name + "': m_b=" + std::to_string(it->second) +
                                       " outside [0, n_b=" + std::to_string(nb) + "]"});
            else if (it->second > 0 && it->second < nb)
              any_random = true;
          }
          if (!any_random && !index.names.empty())
            out.push_back({"per_block", "no block has 0 < m_b < n_b; nothing is randomized"});
        } else {
          out.push_back({"inner", "nested cluster designs are not supported"});
        }
      },
      design.variant);
  return out;
}

}  // namespace

std::vector<Violation> validate_design(const Design& design, const UnitTable& units) {
  if (units.n() == 0) return {{"units", "unit table is empty"}};
  const auto* cluster = std::get_if<ClusterDesign>(&design.variant);
  if (!cluster) return validate_unit_level(design, units);

  std::vector<Violation> out;
  if (!cluster->inner) return {{"inner", "cluster design has no inner design"}};
  if (!units.clusters) return {{"clusters", "cluster design requires a cluster column"}};
  for (std::size_t i = 0; i < units.n(); ++i)
    if ((*units.clusters)[i].empty()) {
      out.push_back({units.ids[i], "unit '" + units.ids[i] + "' has no cluster id"});
    }
  if (!out.empty()) return out;
  UnitTable clusters;
  try {
    UnitTable shape = units;
    shape.treated.reset();
    shape.selected.reset();
    clusters = aggregate_by_cluster(shape);
  } catch (const InputError& e) {
    return {{"clusters", e.what()}};
  }
  return validate_unit_level(*cluster->inner, clusters);
}

// ---------------------------------------------------------------------------
// BoundDesign

namespace {

double log_choose(std::size_t n, std::size_t k) {
  return std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(k) + 1) -
         std::lgamma(static_cast<double>(n - k) + 1);
}

std::string join_violations(const std::vector<Violation>& vs) {
  std::string s;
  for (const auto& v : vs) s += (s.empty() ? "" : "; ") + v.message;
  return s;
}

}  // namespace

BoundDesign::BoundDesign(const Design& design, const UnitTable& units) : design_(design) {
  if (auto vs = validate_design(design, units); !vs.empty())
    throw DesignError("invalid design " + describe(design) + ": " + join_violations(vs));
  units_ = units.n();

  const Design* level = &design;
  UnitTable aggregated;
  const UnitTable* table = &units;
  if (const auto* cluster = std::get_if<ClusterDesign>(&design.variant)) {
    level = cluster->inner.get();
    const auto members = cluster_members(units);
    entity_of_unit_.assign(units.n(), 0);
    for (std::size_t c = 0; c < members.size(); ++c)
      for (auto i : members[c]) entity_of_unit_[i] = c;
    UnitTable shape = units;
    shape.treated.reset();
    shape.selected.reset();
    aggregated = aggregate_by_cluster(shape);
    table = &aggregated;
  }
  entities_ = table->n();

  std::vector<std::size_t> all(entities_);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::visit(
      [&](const auto& v) {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, BernoulliDesign>) {
          strata_.push_back({"all", all, Rule::bernoulli, v.rate, 0});
        } else if constexpr (std::is_same_v<T, CompleteDesign>) {
          strata_.push_back({"all", all, Rule::fixed_count, 0.0, static_cast<std::size_t>(v.m)});
        } else if constexpr (std::is_same_v<T, StratifiedDesign>) {
          const auto index = index_blocks(*table->blocks);
          for (std::size_t b = 0; b < index.names.size(); ++b)
            strata_.push_back({index.names[b], index.members[b], Rule::fixed_count, 0.0,
                               static_cast<std::size_t>(v.per_block.at(index.names[b]))});
        }
      },
      level->variant);
}

Labels BoundDesign::expand(const Labels& entity_labels) const {
  if (entity_of_unit_.empty()) return entity_labels;
  Labels out(units_);
  for (std::size_t i = 0; i < units_; ++i) out[i] = entity_labels[entity_of_unit_[i]];
  return out;
}

std::optional<Labels> BoundDesign::collapse(const Labels& unit_labels) const {
  if (entity_of_unit_.empty()) return unit_labels;
  Labels out(entities_, 2);
  for (std::size_t i = 0; i < units_; ++i) {
    auto& slot = out[entity_of_unit_[i]];
    if (slot == 2) slot = unit_labels[i];
    else if (slot != unit_labels[i]) return std::nullopt;
  }
  return out;
}

AssignmentVector BoundDesign::draw(std::uint64_t seed) const {
  CounterRng rng(seed);
  Labels labels(entities_, 0);
  std::vector<std::size_t> scratch;
  for (const auto& s : strata_) {
    if (s.rule == Rule::bernoulli) {
      for (auto e : s.members) labels[e] = rng.bernoulli(s.rate) ? 1 : 0;
    } else {
      scratch = s.members;
      rng.shuffle(std::span<std::size_t>(scratch));
      for (std::size_t k = 0; k < s.treated; ++k) labels[scratch[k]] = 1;
    }
  }
  return {expand(labels), seed};
}

BaselineProbabilities BoundDesign::baseline() const {
  std::vector<double> entity_q(entities_, 0.0);
  for (const auto& s : strata_) {
    const double q = s.rule == Rule::bernoulli
                         ? s.rate
                         : static_cast<double>(s.treated) / static_cast<double>(s.members.size());
    for (auto e : s.members) entity_q[e] = q;
  }
  BaselineProbabilities out;
  out.q.resize(units_);
  for (std::size_t i = 0; i < units_; ++i) {
    out.q[i] = entity_of_unit_.empty() ? entity_q[i] : entity_q[entity_of_unit_[i]];
    if (out.q[i] <= 0.0 || out.q[i] >= 1.0) out.degenerate.push_back(i);
  }
  return out;
}

std::string BoundDesign::complement_blocker() const {
  for (const auto& s : strata_) {
    if (s.rule == Rule::bernoulli && s.rate != 0.5)
      return "Bernoulli rate " + std::to_string(s.rate) + " != 0.5";
    if (s.rule == Rule::fixed_count && 2 * s.treated != s.members.size())
      return "block '" + s.name + "' treats " + std::to_string(s.treated) + " of " +
             std::to_string(s.members.size()) + " (complement would treat " +
             std::to_string(s.members.size() - s.treated) + ")";
  }
  return {};
}

std::optional<AssignmentVector> BoundDesign::complement(const AssignmentVector& a) const {
  if (!complement_blocker().empty()) return std::nullopt;
  AssignmentVector out = a;
  for (auto& v : out.values) v = static_cast<std::uint8_t>(1 - v);
  return out;
}

std::vector<Violation> BoundDesign::check(const Labels& values) const {
  std::vector<Violation> out;
  if (values.size() != units_) {
    out.push_back({"length", "assignment length " + std::to_string(values.size()) + " != " +
                                 std::to_string(units_)});
    return out;
  }
  for (auto v : values)
    if (v > 1) {
      out.push_back({"values", "assignment labels must be 0 or 1"});
      return out;
    }
  const auto entity = collapse(values);
  if (!entity) {
    out.push_back({"clusters", "units within a cluster carry different labels"});
    return out;
  }
  for (const auto& s : strata_) {
    if (s.rule != Rule::fixed_count) continue;
    std::size_t treated = 0;
    for (auto e : s.members) treated += (*entity)[e];
    if (treated != s.treated)
      out.push_back({s.name, "stratum '" + s.name + "' has " + std::to_string(treated) +
                                 " treated, design requires " + std::to_string(s.treated)});
  }
  return out;
}

Enumeration BoundDesign::enumerate(std::size_t cap) const {
  double log_total = 0.0;
  for (const auto& s : strata_)
    log_total += s.rule == Rule::bernoulli ? static_cast<double>(s.members.size()) * std::log(2.0)
                                           : log_choose(s.members.size(), s.treated);
  const double total = std::exp(log_total);
  if (total > static_cast<double>(cap) + 0.5) return TooLarge{std::round(total)};

  // Per-stratum list of (treated subset, probability), then a Cartesian product.
  std::vector<std::vector<std::pair<std::vector<std::size_t>, double>>> per;
  for (const auto& s : strata_) {
    std::vector<std::pair<std::vector<std::size_t>, double>> options;
    const std::size_t nb = s.members.size();
    auto visit_subsets = [&](auto&& self, std::size_t start, std::vector<std::size_t>& chosen,
                             std::size_t want) -> void {
      if (chosen.size() == want) {
        options.emplace_back(chosen, 0.0);
        return;
      }
      for (std::size_t i = start; i + (want - chosen.size()) <= nb; ++i) {
        chosen.push_back(s.members[i]);
        self(self, i + 1, chosen, want);
        chosen.pop_back();
      }
    };
    std::vector<std::size_t> chosen;
    if (s.rule == Rule::fixed_count) {
      visit_subsets(visit_subsets, 0, chosen, s.treated);
      for (auto& o : options) o.second = 1.0 / static_cast<double>(options.size());
    } else {
      for (std::size_t k = 0; k <= nb; ++k) {
        const std::size_t before = options.size();
        visit_subsets(visit_subsets, 0, chosen, k);
        const double p = std::pow(s.rate, static_cast<double>(k)) *
                         std::pow(1.0 - s.rate, static_cast<double>(nb - k));
        for (std::size_t o = before; o < options.size(); ++o) options[o].second = p;
      }
    }
    per.push_back(std::move(options));
  }

  std::vector<WeightedAssignment> out;
  std::vector<std::size_t> odometer(per.size(), 0);
  while (true) {
    Labels labels(entities_, 0);
    double p = 1.0;
    for (std::size_t s = 0; s < per.size(); ++s) {
      const auto& [subset, prob] = per[s][odometer[s]];
      for (auto e : subset) labels[e] = 1;
      p *= prob;
    }
    out.push_back({expand(labels), p});
    std::size_t s = 0;
    while (s < per.size() && ++odometer[s] == per[s].size()) odometer[s++] = 0;
    if (s == per.size()) break;
  }
  return out;
}

// ---------------------------------------------------------------------------

AssignmentVector draw_assignment(const Design& design, const UnitTable& units, std::uint64_t seed) {
  return BoundDesign(design, units).draw(seed);
}

BaselineProbabilities baseline_probabilities(const Design& design, const UnitTable& units) {
  return BoundDesign(design, units).baseline();
}

std::optional<AssignmentVector> antithetic_complement(const Design& design, const UnitTable& units,
                                                      const AssignmentVector& a) {
  return BoundDesign(design, units).complement(a);
}

Enumeration enumerate_assignments(const Design& design, const UnitTable& units, std::size_t cap) {
  return BoundDesign(design, units).enumerate(cap);
}

}  // namespace raudit
