#include "raudit/config.hpp"

#include <fstream>
#include <limits>
#include <sstream>

#include "raudit/error.hpp"

namespace raudit {
namespace {

template <class T>
std::optional<T> optional_field(const nlohmann::json& obj, const char* key) {
  if (!obj.contains(key) || obj[key].is_null()) return std::nullopt;
  return obj[key].get<T>();
}

ColumnMapping parse_columns(const nlohmann::json& c) {
  ColumnMapping m;
  m.id = c.value("id", m.id);
  m.block = optional_field<std::string>(c, "block");
  m.cluster = optional_field<std::string>(c, "cluster");
  m.lat = optional_field<std::string>(c, "lat");
  m.lon = optional_field<std::string>(c, "lon");
  m.treated = optional_field<std::string>(c, "treated");
  m.selected = optional_field<std::string>(c, "selected");
  m.features = c.value("features", std::vector<std::string>{});
  m.responses = c.value("responses", std::vector<std::string>{});
  return m;
}

}  // namespace

bool is_valid_multiplicity(const std::string& rule) {
  return rule == "max-t" || rule == "bonferroni" || rule == "bh" || rule == "none";
}

AuditConfig parse_config(const nlohmann::json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw InputError("config: expected a JSON object");
  if (doc.contains("schema") && doc["schema"] != kConfigSchema)
    throw InputError("config: unsupported schema " + doc["schema"].dump() + " (expected \"" + kConfigSchema + "\")");
  AuditConfig c;
  c.base_dir = base_dir;
  c.document = doc;
  std::string section = "top level";
  try {
    section = "design";
    if (doc.contains("design")) c.design = design_from_json(doc["design"]);

    section = "learners";
    if (doc.contains("learners")) {
      if (!doc["learners"].is_array()) throw InputError("config: 'learners' must be an array");
      for (const auto& l : doc["learners"]) c.learners.push_back(learner_from_json(l));
    }

    section = "folds";
    if (doc.contains("folds")) {
      const auto& f = doc["folds"];
      c.folds = optional_field<std::size_t>(f, "k");
      c.fold_seed = f.value("seed", c.fold_seed);
      c.stratify = f.value("stratify", c.stratify);
    }

    section = "resampling";
    if (doc.contains("resampling")) {
      const auto& r = doc["resampling"];
      c.resamples = optional_field<std::size_t>(r, "B");
      c.master_seed = optional_field<std::uint64_t>(r, "master_seed");
      c.antithetic = r.value("antithetic", c.antithetic);
      c.unsafe_reuse_observed_model = r.value("unsafe_reuse_observed_model", c.unsafe_reuse_observed_model);
      c.workers = r.value("workers", c.workers);
    }

    section = "score";
    if (doc.contains("score")) c.score = score_kind_from_string(doc["score"].get<std::string>());
    c.epsilon = doc.value("epsilon", c.epsilon);
    section = "multiplicity";
    c.multiplicity = optional_field<std::string>(doc, "multiplicity");
    if (c.multiplicity && !is_valid_multiplicity(*c.multiplicity))
      throw InputError("config: multiplicity must be one of max-t, bonferroni, bh, none (got '" + *c.multiplicity + "')");
    c.alpha = doc.value("alpha", c.alpha);
    if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw InputError("config: alpha must lie in (0,1)");
    c.standardize = doc.value("standardize", c.standardize);
    if (doc.contains("cluster_analysis")) {
      const auto mode = doc["cluster_analysis"].get<std::string>();
      if (mode != "aggregate" && mode != "unit")
        throw InputError("config: cluster_analysis must be 'aggregate' or 'unit'");
      c.expand_clusters = mode == "unit";
    }

    section = "data";
    if (doc.contains("data")) {
      const auto& d = doc["data"];
      DataSource src;
      src.path = d.at("path").get<std::string>();
      src.columns = parse_columns(d.value("columns", nlohmann::json::object()));
      c.data = src;
    }
    section = "frame";
    if (doc.contains("frame")) {
      const auto& f = doc["frame"];
      c.frame = FrameSource{f.at("path").get<std::string>(), f.value("description", std::string{})};
    }
    section = "output";
    if (doc.contains("output")) c.output_dir = optional_field<std::string>(doc["output"], "dir");

    section = "diagnostics";
    if (doc.contains("diagnostics")) {
      const auto& d = doc["diagnostics"];
      const auto ref = d.value("reference", std::string("permute"));
      if (ref == "permute") c.reference = ReferenceMechanism::permute;
      else if (ref == "redraw") c.reference = ReferenceMechanism::redraw;
      else throw InputError("config: diagnostics.reference must be 'permute' or 'redraw'");
      c.ipw_floor = d.value("ipw_floor", c.ipw_floor);
    }

    section = "power";
    if (doc.contains("power")) {
      const auto& p = doc["power"];
      PowerConfig pc;
      pc.scenario = scenario_from_json(p.at("scenario"));
      pc.effects = {0.0};
      if (p.contains("effects")) {
        pc.effects.clear();
        for (const auto& e : p["effects"]) {
          if (e.is_string() && e == "inf") pc.effects.push_back(std::numeric_limits<double>::infinity());
          else pc.effects.push_back(e.get<double>());
        }
      }
      pc.replications = p.value("replications", std::size_t{0});
      c.power = pc;
    }
    if (doc.contains("provenance")) c.provenance = doc["provenance"];
  } catch (const nlohmann::json::exception& e) {
    throw InputError("config: malformed '" + section + "' section: " + e.what());
  }
  return c;
}

AuditConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError("config '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_config(doc, path.parent_path());
}

std::string config_hash(const AuditConfig& config) { return sha256_hex(config.document.dump()); }

void apply_overrides(AuditConfig& config, const Overrides& o) {
  if (o.data) {
    if (!config.data) config.data = DataSource{};
    config.overrides["data.path"] = {{"from", config.data->path.string()}, {"to", o.data->string()}};
    config.data->path = std::filesystem::absolute(*o.data);
  }
  if (o.frame) {
    if (!config.frame) config.frame = FrameSource{};
    config.overrides["frame.path"] = {{"from", config.frame->path.string()}, {"to", o.frame->string()}};
    config.frame->path = std::filesystem::absolute(*o.frame);
  }
  if (o.output_dir) {
    config.overrides["output.dir"] = {{"from", config.output_dir ? config.output_dir->string() : std::string{}},
                                      {"to", o.output_dir->string()}};
    config.output_dir = std::filesystem::absolute(*o.output_dir);
  }
  if (o.seed) {
    config.overrides["resampling.master_seed"] = {
        {"from", config.master_seed ? nlohmann::json(*config.master_seed) : nlohmann::json(nullptr)}, {"to", *o.seed}};
    config.master_seed = *o.seed;
  }
  if (o.workers) {
    config.overrides["resampling.workers"] = {{"from", config.workers}, {"to", *o.workers}};
    config.workers = *o.workers;
  }
}

std::filesystem::path resolve(const AuditConfig& config, const std::filesystem::path& p) {
  if (p.is_absolute() || config.base_dir.empty()) return p;
  return config.base_dir / p;
}

}  // namespace raudit
